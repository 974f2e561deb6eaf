import numpy as np
import pytest

from pmce import autodiff as ad
from pmce.body import nearest_joint_init
from pmce.model import PMCE
from pmce.nn import randomize_


def _inputs(body, cfg, rng, n=2):
    pose0 = rng.normal(scale=0.3, size=(n, body.num_joints, 3))
    f = rng.uniform(-1, 1, size=(n, cfg.feat_dim))
    return pose0, nearest_joint_init(body, pose0), f


@pytest.fixture
def model(cfg, body):
    return PMCE(cfg, body)


def test_shapes(model, body, cfg, rng):
    pose0, m0, f = _inputs(body, cfg, rng, n=3)
    p, coarse, fine = model.decoder(ad.tensor(pose0), ad.tensor(m0), ad.tensor(f))
    assert p.shape == (3, body.num_joints, 3)
    assert coarse.shape == (3, body.num_coarse, 3)
    assert fine.shape == (3, body.num_vertices, 3)


def test_untrained_decoder_passes_inputs_through(model, body, cfg, rng):
    pose0, m0, f = _inputs(body, cfg, rng)
    p, coarse, fine = model.decoder(ad.tensor(pose0), ad.tensor(m0), ad.tensor(f))
    np.testing.assert_array_equal(p.data, pose0)
    np.testing.assert_array_equal(coarse.data, m0)
    np.testing.assert_allclose(fine.data, body.coarse.upsample_init @ m0, atol=1e-14)


def test_bad_input_shapes(model, body, cfg, rng):
    pose0, m0, f = _inputs(body, cfg, rng)
    with pytest.raises(ValueError):
        model.decoder(ad.tensor(pose0[:, :-1]), ad.tensor(m0), ad.tensor(f))
    with pytest.raises(ValueError):
        model.decoder(ad.tensor(pose0), ad.tensor(m0[:, :-1]), ad.tensor(f))


def _sensitivities(decoder, pose0, m0, f, rng, eps=0.1):
    base_p, base_m, _ = (t.data for t in decoder(ad.tensor(pose0), ad.tensor(m0), ad.tensor(f)))
    dp = eps * rng.standard_normal(pose0.shape)
    dm = eps * rng.standard_normal(m0.shape)
    p_m, _, _ = decoder(ad.tensor(pose0), ad.tensor(m0 + dm), ad.tensor(f))
    _, m_p, _ = decoder(ad.tensor(pose0 + dp), ad.tensor(m0), ad.tensor(f))
    return np.abs(p_m.data - base_p).max(), np.abs(m_p.data - base_m).max()


@pytest.mark.parametrize("cut", ["mesh_to_pose", "pose_to_mesh"])
def test_directional_interaction(cut, model, body, cfg, rng):
    randomize_(model.decoder, rng)
    pose0, m0, f = _inputs(body, cfg, rng)
    with ad.no_grad():
        p_from_m, m_from_p = _sensitivities(model.decoder, pose0, m0, f, rng)
        assert p_from_m > 1e-4 and m_from_p > 1e-4
        model.decoder.zero_cross(cut)
        p_from_m, m_from_p = _sensitivities(model.decoder, pose0, m0, f, rng)
    if cut == "mesh_to_pose":
        assert p_from_m == 0.0
        assert m_from_p > 1e-4
    else:
        assert m_from_p == 0.0
        assert p_from_m > 1e-4


def test_zero_cross_rejects_unknown(model):
    with pytest.raises(ValueError):
        model.decoder.zero_cross("sideways")


def test_attention_maps(model, body, cfg, rng):
    randomize_(model.decoder, rng)
    pose0, m0, f = _inputs(body, cfg, rng, n=1)
    block = model.decoder.blocks[0]
    with pytest.raises(RuntimeError):
        block.attention_maps()
    block.set_recording(True)
    with ad.no_grad():
        model.decoder(ad.tensor(pose0), ad.tensor(m0), ad.tensor(f))
    maps = block.attention_maps()
    J, Vc = body.num_joints, body.num_coarse
    assert maps["mesh_to_pose"].shape == (1, J, Vc)
    assert maps["pose_to_mesh"].shape == (1, Vc, J)
    assert maps["pose_to_pose"].shape == (1, J, J)
    assert maps["mesh_to_mesh"].shape == (1, Vc, Vc)
    for w in maps.values():
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)


def test_feature_reaches_every_branch(model, body, cfg, rng):
    randomize_(model.decoder, rng)
    pose0, m0, f0 = _inputs(body, cfg, rng)
    f = ad.parameter(f0)
    p, coarse, fine = model.decoder(ad.tensor(pose0), ad.tensor(m0), f)
    ad.backward(ad.add(ad.sum_axis(p), ad.sum_axis(fine)))
    assert np.abs(f.grad).max() > 0
    for name, param in model.decoder.named_parameters():
        assert param.grad is not None, name
