"""Small end-to-end experiments shared by the acceptance tests and scripts/."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .config import TrainConfig
from .data import MotionClip, generate_dataset
from .train import TrainResult, evaluate, model_from_checkpoint, train_stage1, train_stage2

log = logging.getLogger(__name__)


@dataclass
class OverfitRun:
    stage1: TrainResult
    stage2: TrainResult
    mpjpe: float
    pve: float
    body_height: float


def overfit(cfg: TrainConfig, clips: list[MotionClip]) -> OverfitRun:
    """Both stages on ``clips``, then metrics on the same clips."""
    s1 = train_stage1(cfg, clips)
    s2 = train_stage2(cfg, clips, s1.checkpoint)
    model, c = model_from_checkpoint(s2.checkpoint)
    _, total = evaluate(model, clips, c)
    return OverfitRun(s1, s2, total.mpjpe, total.pve, model.body.height())


@dataclass
class AblationRow:
    seed: int
    pve_features: float
    pve_zero: float

    @property
    def holds(self) -> bool:
        return self.pve_zero > self.pve_features


def _converged_pve(cfg: TrainConfig, clips: list[MotionClip], stage1_steps: int) -> float:
    s1 = train_stage1(cfg.replace(steps=stage1_steps), clips)
    s2 = train_stage2(cfg, clips, s1.checkpoint)
    model, c = model_from_checkpoint(s2.checkpoint)
    return evaluate(model, clips, c)[1].pve


def feature_ablation(cfg: TrainConfig, seeds=(0, 1, 2), stage1_steps: int = 1000,
                     stage2_steps: int = 1000, num_clips: int = 4) -> list[AblationRow]:
    """Both stages, informative vs all-zero features, same budget and data.

    Body girth varies per clip and reaches the network only through the
    features, so with zeros the mesh can at best fit the average girth.
    """
    rows = []
    for seed in seeds:
        c = cfg.replace(seed=seed, steps=stage2_steps, log_every=0)
        clips = generate_dataset(c.synth_config(), seed, num_clips)
        with_f = _converged_pve(c, clips, stage1_steps)
        zero = _converged_pve(c.replace(zero_features=True), clips, stage1_steps)
        log.info("seed %d: PVE %.5g with features, %.5g with zeros", seed, with_f, zero)
        rows.append(AblationRow(seed, with_f, zero))
    return rows
