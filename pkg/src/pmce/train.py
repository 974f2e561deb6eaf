"""Two-stage training, evaluation and the helpers the CLI and scripts share."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt_io
from ._alloc import keep_heap_memory
from .body import BodyModel, build_body
from .checkpoint import Checkpoint, CheckpointError
from .config import TrainConfig
from .data import Batch, MotionClip, make_batch, windows
from .losses import loss_joint_int, total_loss
from .metrics import EvaluationReport, aggregate_reports, metrics
from .model import PMCE
from .optim import Adam, AdamConfig, cosine_lr

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    losses: list[float] = field(default_factory=list)
    components: dict[str, float] = field(default_factory=dict)
    seconds: float = 0.0


def build_model(cfg: TrainConfig, body: BodyModel | None = None) -> PMCE:
    body = body or build_body(cfg.body_config())
    return PMCE(cfg, body)


def sample_batch(batch: Batch, cfg: TrainConfig, step: int) -> Batch:
    """Full batch when it fits, else a draw seeded by (seed, stage, step)."""
    n = len(batch.pose_gt)
    if cfg.batch_size <= 0 or cfg.batch_size >= n:
        return batch
    rng = np.random.default_rng([cfg.seed, cfg.stage, step])
    return batch.select(np.sort(rng.choice(n, cfg.batch_size, replace=False)))


def _check_body(cfg: TrainConfig, clips: list[MotionClip], body: BodyModel) -> None:
    for c in clips:
        if c.joints.shape[1] != body.num_joints or c.mesh.shape[1] != body.num_vertices:
            raise ValueError(
                f"clip {c.seed}: {c.joints.shape[1]} joints / {c.mesh.shape[1]} vertices, "
                f"model expects {body.num_joints} / {body.num_vertices}"
            )
        if c.features.shape[1] != cfg.feat_dim:
            raise ValueError(f"clip {c.seed}: feature width {c.features.shape[1]}, model expects {cfg.feat_dim}")


def snapshot(model: PMCE, opt: Adam, cfg: TrainConfig, step: int, losses) -> Checkpoint:
    """Everything a resumed run needs; ``step`` is the next step to execute."""
    tensors = model.state_dict()
    tensors.update({f"optim.{k}": v for k, v in opt.state().items()})
    return Checkpoint(tensors, cfg.to_dict(), cfg.stage, step, {"losses": list(losses)})


def stage1_loss(model: PMCE, b: Batch, step: int | None = None) -> ad.Tensor:
    return loss_joint_int(model.estimate_pose(b.pose_2d, b.features), b.pose_gt)


def stage2_loss(model: PMCE, b: Batch, cfg: TrainConfig, step: int | None = None):
    pred = model(b.pose_2d, b.features)
    body = model.body
    return total_loss(pred.mesh, pred.pose if cfg.supervise_pose else None, b.mesh_gt, b.pose_gt,
                      body.regressor, body.faces, cfg.loss_weights(step), cfg.surface_reduction)


def _run(model: PMCE, params, loss_fn, data: Batch, cfg: TrainConfig, start: int = 0,
         resume: Checkpoint | None = None, on_step=None) -> TrainResult:
    keep_heap_memory()
    if cfg.lr_schedule not in ("cosine", "constant"):
        raise ValueError(f"unknown lr_schedule {cfg.lr_schedule!r}")
    opt = Adam(params, AdamConfig(lr=cfg.lr, clip_grad=cfg.clip_grad))
    losses: list[float] = []
    if resume is not None:
        opt.load_state(resume.subset("optim"))
        losses = list(resume.extra.get("losses", []))
    t0 = time.perf_counter()
    components = {}
    for step in range(start, cfg.steps):
        b = sample_batch(data, cfg, step)
        if cfg.lr_schedule == "cosine":
            opt.lr = cosine_lr(cfg.lr, step, cfg.steps)
        out = loss_fn(model, b, step)
        loss, comps = out if isinstance(out, tuple) else (out, {})
        ad.backward(loss)
        opt.step()
        opt.zero_grad()
        value = float(loss.data)
        losses.append(value)
        components = {k: float(v.data) for k, v in comps.items()}
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            log.info("stage %d step %d loss %.6g", cfg.stage, step, value)
        if on_step is not None:
            on_step(step, model, opt, losses)
    ckpt = snapshot(model, opt, cfg, cfg.steps, losses)
    return TrainResult(ckpt, losses, components, time.perf_counter() - t0)


def train_stage1(cfg: TrainConfig, clips: list[MotionClip], resume: Checkpoint | None = None,
                 on_step=None) -> TrainResult:
    """Pose stream (with its feature injection) on L_joint_int alone."""
    cfg = cfg.replace(stage=1)
    model = build_model(cfg)
    _check_body(cfg, clips, model.body)
    data = make_batch(clips, cfg.num_frames, cfg.zero_features)
    start = 0
    if resume is not None:
        if resume.stage != 1:
            raise CheckpointError(f"cannot resume stage 1 from a stage-{resume.stage} checkpoint")
        model.load_state_dict({k: v for k, v in resume.tensors.items() if not k.startswith("optim.")})
        start = resume.step
    return _run(model, model.pose_parameters(), stage1_loss, data, cfg, start, resume, on_step)


def load_stage1_weights(model: PMCE, stage1: Checkpoint) -> list[str]:
    if stage1.stage != 1:
        raise CheckpointError(f"expected a stage-1 checkpoint, got stage {stage1.stage}")
    pose = {f"pose_stream.{k}": v for k, v in stage1.subset("pose_stream").items()}
    own = {n for n, _ in model.pose_stream.named_parameters("pose_stream.")}
    if set(pose) != own:
        raise CheckpointError("stage-1 checkpoint does not match the pose stream layout")
    return model.load_state_dict(pose, strict=False)


def train_stage2(cfg: TrainConfig, clips: list[MotionClip], stage1: Checkpoint | None,
                 resume: Checkpoint | None = None, on_step=None) -> TrainResult:
    """Whole network end to end on the weighted mesh objective."""
    cfg = cfg.replace(stage=2)
    model = build_model(cfg)
    _check_body(cfg, clips, model.body)
    data = make_batch(clips, cfg.num_frames, cfg.zero_features)
    start = 0
    if resume is not None:
        if resume.stage != 2:
            raise CheckpointError(f"cannot resume stage 2 from a stage-{resume.stage} checkpoint")
        model.load_state_dict({k: v for k, v in resume.tensors.items() if not k.startswith("optim.")})
        start = resume.step
    elif stage1 is not None:
        load_stage1_weights(model, stage1)
    return _run(model, model.parameters(), lambda m, b, step: stage2_loss(m, b, cfg, step), data, cfg,
                start, resume, on_step)


def model_from_checkpoint(ckpt: Checkpoint, cfg: TrainConfig | None = None) -> tuple[PMCE, TrainConfig]:
    cfg = cfg or TrainConfig.from_dict(ckpt.config)
    model = build_model(cfg)
    weights = {k: v for k, v in ckpt.tensors.items() if not k.startswith("optim.")}
    if ckpt.stage == 1:
        load_stage1_weights(model, ckpt)
    else:
        model.load_state_dict(weights)
    return model, cfg


@dataclass
class ClipPrediction:
    joints: np.ndarray  # (N, J, 3) regressed from the mesh
    mesh: np.ndarray  # (N, V, 3)
    pose: np.ndarray  # (N, J, 3) decoder pose tokens
    gt_joints: np.ndarray
    gt_mesh: np.ndarray


def predict_clip(model: PMCE, clip: MotionClip, cfg: TrainConfig) -> ClipPrediction | None:
    b = windows(clip, cfg.num_frames, cfg.zero_features)
    if len(b.pose_gt) == 0:
        return None
    with ad.no_grad():
        pred = model(b.pose_2d, b.features)
    mesh = pred.mesh.data
    joints = np.einsum("jv,nvc->njc", model.body.regressor, mesh)
    return ClipPrediction(joints, mesh, pred.pose.data, b.pose_gt, b.mesh_gt)


def evaluate(model: PMCE, clips: list[MotionClip], cfg: TrainConfig) -> tuple[list[EvaluationReport], EvaluationReport]:
    """Per-clip reports on the mid-frame predictions of every window, plus the aggregate."""
    reports = []
    for clip in clips:
        p = predict_clip(model, clip, cfg)
        if p is None:
            log.warning("clip %d has %d frames < T=%d; skipped", clip.seed, clip.num_frames, cfg.num_frames)
            continue
        reports.append(metrics(p.joints, p.mesh, p.gt_joints, p.gt_mesh, cfg.fps))
    if not reports:
        raise ValueError("no clip is long enough to evaluate")
    return reports, aggregate_reports(reports)


def save_checkpoint(result: TrainResult, path) -> None:
    ckpt_io.save(result.checkpoint, path)
