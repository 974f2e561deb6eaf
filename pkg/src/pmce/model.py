"""The full network: pose stream + feature stream + co-evolution decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .body import BodyModel, nearest_joint_init
from .config import TrainConfig
from .decoder import Decoder
from .feature_stream import FeatureStream
from .nn import Module
from .pose_stream import PoseStream


@dataclass
class Prediction:
    pose0: Tensor  # (..., J, 3) encoder pose
    feature: Tensor  # (..., D_f)
    pose: Tensor  # (..., J, 3) decoder pose
    coarse: Tensor  # (..., V', 3)
    mesh: Tensor  # (..., V, 3)


class PMCE(Module):
    def __init__(self, cfg: TrainConfig, body: BodyModel, seed: int | None = None):
        seed = cfg.seed if seed is None else seed
        self.body = body
        self.pose_stream = PoseStream(
            cfg.num_frames, body.num_joints, cfg.feat_dim, cfg.pose_dim, cfg.pose_depth,
            cfg.pose_heads, np.random.default_rng([seed, 0]), cfg.mlp_ratio, cfg.activation,
            cfg.pre_norm,
        )
        self.feature_stream = FeatureStream(
            cfg.feat_dim, cfg.gru_hidden, np.random.default_rng([seed, 1]), cfg.gru_readout
        )
        self.decoder = Decoder(
            body.num_joints, body.num_coarse, body.num_vertices, cfg.feat_dim, cfg.decoder_dim,
            cfg.decoder_depth, cfg.decoder_heads, body.coarse.upsample_init,
            np.random.default_rng([seed, 2]), cfg.residual_rank, cfg.mlp_ratio, cfg.adaln_depth,
            cfg.adaln_unit_gain,
        )

    def pose_parameters(self) -> list[Tensor]:
        return self.pose_stream.parameters()

    def estimate_pose(self, pose_2d, features) -> Tensor:
        return self.pose_stream(ad.tensor(pose_2d), ad.tensor(features))

    def __call__(self, pose_2d, features) -> Prediction:
        """pose_2d (..., T, J, 2) normalized, features (..., T, D_f)."""
        features = ad.tensor(features)
        pose0 = self.pose_stream(ad.tensor(pose_2d), features)
        f = self.feature_stream(features)
        mesh_init = nearest_joint_init(self.body, pose0)
        pose, coarse, mesh = self.decoder(pose0, mesh_init, f)
        return Prediction(pose0, f, pose, coarse, mesh)
