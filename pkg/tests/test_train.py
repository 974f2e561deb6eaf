import numpy as np
import pytest

from pmce import autodiff as ad
from pmce.checkpoint import CheckpointError
from pmce.data import make_batch
from pmce.train import (build_model, evaluate, load_stage1_weights, model_from_checkpoint,
                        sample_batch, snapshot, train_stage1, train_stage2)


@pytest.fixture(scope="module")
def short(cfg):
    return cfg.replace(steps=6, log_every=0)


@pytest.fixture(scope="module")
def stage1(short, clips):
    return train_stage1(short, clips)


def test_first_stage1_loss_is_l1_of_targets(short, clips, stage1):
    gt = make_batch(clips, short.num_frames).pose_gt
    expected = np.abs(gt).sum(-1).mean()
    assert stage1.losses[0] == pytest.approx(expected, rel=1e-12)


def test_training_curves_repeat_bit_exactly(short, clips, stage1):
    again = train_stage1(short, clips)
    assert again.losses == stage1.losses
    for k, v in stage1.checkpoint.tensors.items():
        assert again.checkpoint.tensors[k].tobytes() == v.tobytes()


def test_resume_continues_bit_exactly(short, clips, stage1):
    saved = {}

    def grab(step, model, opt, losses):
        if step == 2:
            saved["ckpt"] = snapshot(model, opt, short.replace(stage=1), step + 1, losses)

    train_stage1(short, clips, on_step=grab)
    resumed = train_stage1(short, clips, resume=saved["ckpt"])
    assert resumed.losses == stage1.losses
    for k, v in stage1.checkpoint.tensors.items():
        assert resumed.checkpoint.tensors[k].tobytes() == v.tobytes(), k


def test_stage1_touches_only_the_pose_stream(short, clips, stage1):
    fresh = build_model(short).state_dict()
    for k, v in stage1.checkpoint.tensors.items():
        if k.startswith("optim."):
            continue
        changed = not np.array_equal(fresh[k], v)
        assert changed == k.startswith("pose_stream.") or not changed, k
    assert any(not np.array_equal(fresh[k], stage1.checkpoint.tensors[k])
               for k in fresh if k.startswith("pose_stream."))


def test_stage2_starts_from_the_stage1_pose(short, clips, stage1):
    b = make_batch(clips, short.num_frames)
    m1, _ = model_from_checkpoint(stage1.checkpoint)
    m2 = build_model(short.replace(stage=2))
    load_stage1_weights(m2, stage1.checkpoint)
    with ad.no_grad():
        p1 = m1.estimate_pose(b.pose_2d, b.features).data
        pred = m2(b.pose_2d, b.features)
    np.testing.assert_array_equal(pred.pose0.data, p1)
    np.testing.assert_array_equal(pred.pose.data, p1)


def test_zero_loss_weights_freeze_the_model(short, clips, stage1):
    cfg = short.replace(w_mesh=0.0, w_joint=0.0, w_normal=0.0, w_edge=0.0, steps=2)
    out = train_stage2(cfg, clips, stage1.checkpoint)
    m = build_model(cfg.replace(stage=2))
    load_stage1_weights(m, stage1.checkpoint)
    for k, v in m.state_dict().items():
        np.testing.assert_array_equal(out.checkpoint.tensors[k], v, err_msg=k)
    assert out.losses == [0.0, 0.0]


def test_stage_mismatch_is_rejected(short, clips, stage1):
    with pytest.raises(CheckpointError):
        train_stage2(short, clips, None, resume=stage1.checkpoint)
    s2 = train_stage2(short.replace(steps=1), clips, stage1.checkpoint)
    with pytest.raises(CheckpointError):
        train_stage1(short, clips, resume=s2.checkpoint)
    with pytest.raises(CheckpointError):
        train_stage2(short, clips, s2.checkpoint)


def test_wrong_body_is_rejected(short, clips):
    with pytest.raises(ValueError):
        train_stage1(short.replace(num_joints=14), clips)


def test_minibatch_draws_are_seeded(short, clips):
    data = make_batch(clips, short.num_frames)
    cfg = short.replace(batch_size=3)
    a, b = sample_batch(data, cfg, 4), sample_batch(data, cfg, 4)
    assert len(a) == 3
    np.testing.assert_array_equal(a.pose_gt, b.pose_gt)
    assert sample_batch(data, short, 4) is data


def test_unknown_schedule(short, clips):
    with pytest.raises(ValueError):
        train_stage1(short.replace(lr_schedule="step"), clips)


def test_evaluate_reports_every_clip(short, clips, stage1):
    model, cfg = model_from_checkpoint(stage1.checkpoint)
    per_clip, total = evaluate(model, clips, cfg)
    assert len(per_clip) == len(clips)
    assert total.frames == sum(r.frames for r in per_clip)
    assert total.pa_mpjpe <= total.mpjpe + 1e-12
