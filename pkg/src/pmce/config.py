"""Run configuration: one flat dataclass, presets, and the ``key = value`` file format.

The mid frame of a window is index ``num_frames // 2`` (zero-based) everywhere:
data windows, pose supervision and the GRU readout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .body import BodyConfig
from .data import SynthConfig
from .losses import LossWeights


@dataclass
class TrainConfig:
    preset: str = "toy"
    stage: int = 1
    # body / data
    num_joints: int = 12
    rings_per_bone: int = 2
    verts_per_ring: int = 6
    coarse_stride: int = 3
    clip_frames: int = 9
    noise_std: float = 2.0
    motion_amplitude: float = 0.5
    # model
    num_frames: int = 8
    feat_dim: int = 32
    pose_dim: int = 64
    pose_depth: int = 2
    pose_heads: int = 4
    decoder_dim: int = 32
    decoder_depth: int = 2
    decoder_heads: int = 4
    gru_hidden: int = 16
    mlp_ratio: int = 2
    residual_rank: int = 8
    adaln_depth: int = 1
    adaln_unit_gain: bool = True
    gru_readout: str = "mid"
    activation: str = "gelu"
    pre_norm: bool = True
    supervise_pose: bool = True
    # optimization
    batch_size: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # or "constant"
    steps: int = 3000
    epochs: int = 0
    clip_grad: float = 1.0
    seed: int = 0
    zero_features: bool = False
    w_mesh: float = 1.0
    w_joint: float = 1.0
    w_normal: float = 0.1
    w_edge: float = 20.0
    surface_reduction: str = "mean"  # "sum" over faces, or the face mean
    surface_warmup: float = 0.3  # fraction of stage 2 over which normal/edge weights ramp up from 0
    # io
    dataset: str = ""
    checkpoint: str = ""
    fps: float = 1.0
    log_every: int = 100

    def body_config(self) -> BodyConfig:
        return BodyConfig(self.num_joints, self.rings_per_bone, self.verts_per_ring, self.coarse_stride)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(body=self.body_config(), clip_frames=self.clip_frames,
                           feat_dim=self.feat_dim, motion_amplitude=self.motion_amplitude,
                           noise_std=self.noise_std)

    def loss_weights(self, step: int | None = None) -> LossWeights:
        """Weights at ``step``; surface terms ramp linearly during the warmup."""
        ramp = 1.0
        if step is not None and self.surface_warmup > 0:
            ramp = min(1.0, step / (self.surface_warmup * max(self.steps, 1)))
        return LossWeights(self.w_mesh, self.w_joint, ramp * self.w_normal, ramp * self.w_edge)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def toy() -> TrainConfig:
    return TrainConfig()


def full() -> TrainConfig:
    """Full-scale sizes; steps derive from epochs once a dataset size is known."""
    return TrainConfig(
        preset="full", num_joints=24, rings_per_bone=12, verts_per_ring=24, coarse_stride=16,
        clip_frames=16, num_frames=16, feat_dim=2048, pose_dim=256, pose_depth=3, pose_heads=8,
        decoder_dim=64, decoder_depth=3, decoder_heads=8, gru_hidden=1024, lr=5e-5,
        batch_size=64, epochs=30, steps=0, noise_std=2.0,
    )


PRESETS = {"toy": toy, "full": full}


def preset(name: str, stage: int = 1) -> TrainConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[name]().replace(stage=stage)
    if name == "full" and stage == 2:
        cfg = cfg.replace(batch_size=32, epochs=20)
    return cfg


def _coerce(field_type, raw: str):
    t = field_type if isinstance(field_type, str) else field_type.__name__
    if t == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    return raw.strip()


def parse_overrides(pairs: dict[str, str], base: TrainConfig) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    changes = {}
    for key, raw in pairs.items():
        key = key.replace("-", "_")
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        changes[key] = _coerce(types[key], raw)
    return base.replace(**changes)


def read_kv(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None, preset_name: str | None = None,
                stage: int = 1) -> TrainConfig:
    pairs = read_kv(path) if path else {}
    name = preset_name or pairs.get("preset", "toy")
    cfg = preset(name, stage)
    cfg = parse_overrides({k: v for k, v in pairs.items() if k != "preset"}, cfg)
    return parse_overrides(overrides or {}, cfg)


def write_kv(cfg: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in cfg.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n")
