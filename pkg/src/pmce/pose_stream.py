"""Spatial-temporal Transformer that lifts a 2D pose sequence to the mid-frame 3D pose."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import LayerNorm, MLPBlock, MultiHeadAttention
from .autodiff import Tensor
from .nn import Linear, Module


def normalize_2d(joints: np.ndarray, width: float, height: float) -> np.ndarray:
    """Pixel keypoints -> full-image normalized coordinates.

    x lands in [-1, 1] and y in [-h/w, h/w] for in-image points; nothing is
    clamped.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid image size {width}x{height}")
    joints = np.asarray(joints, dtype=np.float64)
    return 2.0 * joints / width - np.array([1.0, height / width])


def denormalize_2d(normed: np.ndarray, width: float, height: float) -> np.ndarray:
    if width <= 0 or height <= 0:
        raise ValueError(f"invalid image size {width}x{height}")
    return (np.asarray(normed) + np.array([1.0, height / width])) * width / 2.0


class TransformerLayer(Module):
    """Pre-norm self-attention + MLP, both with residuals, over axis -2."""

    def __init__(self, d: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4,
                 activation: str = "gelu", pre_norm: bool = True):
        self.norm1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng)
        self.norm2 = LayerNorm(d)
        self.mlp = MLPBlock(d, rng, mlp_ratio, activation)
        self.pre_norm = pre_norm

    def __call__(self, x: Tensor) -> Tensor:
        if self.pre_norm:
            x = x + self.attn(self.norm1(x))
            return x + self.mlp(self.norm2(x))
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.mlp(x))


def spatial_layer(x: Tensor, layer: TransformerLayer) -> Tensor:
    """Attend across the J joints of each frame. x: (..., T, J, C)."""
    return layer(x)


def temporal_layer(x: Tensor, layer: TransformerLayer) -> Tensor:
    """Attend across the T frames of each joint. x: (..., T, J, C)."""
    return layer(x.swapaxes(-2, -3)).swapaxes(-2, -3)


class PoseStream(Module):
    def __init__(self, num_frames: int, num_joints: int, feat_dim: int, dim: int,
                 depth: int, heads: int, rng: np.random.Generator, mlp_ratio: int = 4,
                 activation: str = "gelu", pre_norm: bool = True):
        self.num_frames, self.num_joints = num_frames, num_joints
        self.feat_dim, self.dim = feat_dim, dim
        self.joint_embed = Linear(2, dim, rng)
        self.feature_proj = Linear(feat_dim, dim, rng)
        self.spatial_pos = ad.parameter(rng.normal(0.0, 0.02, size=(num_joints, dim)))
        self.temporal_pos = ad.parameter(rng.normal(0.0, 0.02, size=(num_frames, dim)))
        self.spatial_layers = [
            TransformerLayer(dim, heads, rng, mlp_ratio, activation, pre_norm) for _ in range(depth)
        ]
        self.temporal_layers = [
            TransformerLayer(dim, heads, rng, mlp_ratio, activation, pre_norm) for _ in range(depth)
        ]
        self.head_norm = LayerNorm(dim)
        self.head = Linear(dim, 3, rng, zero_init=True)
        # learned T -> 1 fusion, starts as a plain average over frames
        self.fuse_weight = ad.parameter(np.full((num_frames,), 1.0 / num_frames))
        self.fuse_bias = ad.parameter(np.zeros(1))

    def inject_image_features(self, x: Tensor, features: Tensor) -> Tensor:
        """Add the projected per-frame feature to every joint token of that frame."""
        if features.shape[-2] != x.shape[-3]:
            raise ValueError(f"frame count mismatch: tokens {x.shape}, features {features.shape}")
        proj = self.feature_proj(features)
        return x + proj.reshape(*proj.shape[:-1], 1, self.dim)

    def encode(self, pose_2d: Tensor, features: Tensor) -> Tensor:
        """Normalized 2D poses (..., T, J, 2) -> token grid (..., T, J, C)."""
        if pose_2d.shape[-3:] != (self.num_frames, self.num_joints, 2):
            raise ValueError(
                f"expected poses (..., {self.num_frames}, {self.num_joints}, 2), got {pose_2d.shape}"
            )
        x = self.joint_embed(pose_2d)
        x = self.inject_image_features(x, features)
        x = x + self.spatial_pos + self.temporal_pos.reshape(self.num_frames, 1, self.dim)
        for spatial, temporal in zip(self.spatial_layers, self.temporal_layers):
            x = spatial_layer(x, spatial)
            x = temporal_layer(x, temporal)
        return x

    def __call__(self, pose_2d: Tensor, features: Tensor) -> Tensor:
        """Mid-frame 3D pose (..., J, 3)."""
        x = self.encode(pose_2d, features)
        per_frame = self.head(self.head_norm(x))  # (..., T, J, 3)
        moved = ad.permute(per_frame, _move_frames_last(per_frame.ndim))  # (..., J, 3, T)
        fused = ad.matmul(moved, self.fuse_weight.reshape(self.num_frames, 1))
        return fused.reshape(*fused.shape[:-1]) + self.fuse_bias


def _move_frames_last(ndim: int) -> list[int]:
    lead = list(range(ndim - 3))
    return lead + [ndim - 2, ndim - 1, ndim - 3]


def estimate_midframe_pose(pose_2d_pixels: np.ndarray, width: float, height: float,
                           features, stream: PoseStream) -> Tensor:
    normed = ad.tensor(normalize_2d(pose_2d_pixels, width, height))
    return stream(normed, ad.tensor(features))
