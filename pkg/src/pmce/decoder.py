"""Co-evolution decoder: pose and coarse-mesh tokens refine each other under AdaLN."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import AdaLN, MLPBlock, MultiHeadAttention
from .autodiff import Tensor
from .nn import Linear, Module


class StreamBranch(Module):
    """Everything one token stream (pose or mesh) owns inside a co-evolution block."""

    def __init__(self, dim: int, feat_dim: int, heads: int, rng: np.random.Generator,
                 mlp_ratio: int = 4, adaln_depth: int = 1, adaln_unit_gain: bool = True,
                 adaln_zero_init: bool = True):
        def norm():
            return AdaLN(dim, feat_dim, rng, adaln_depth, adaln_unit_gain, adaln_zero_init)

        self.norm_cross = norm()
        self.cross_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_merge = norm()
        self.mlp_merge = MLPBlock(dim, rng, mlp_ratio)
        self.norm_self = norm()
        self.self_attn = MultiHeadAttention(dim, heads, rng)
        self.norm_ffn = norm()
        self.mlp_ffn = MLPBlock(dim, rng, mlp_ratio)

    def refine(self, x: Tensor, f: Tensor) -> Tensor:
        """Merge MLP, then self-attention and MLP, each AdaLN-normalized with a residual."""
        x = self.mlp_merge(self.norm_merge(x, f)) + x
        x = self.self_attn(self.norm_self(x, f)) + x
        return self.mlp_ffn(self.norm_ffn(x, f)) + x


class CoEvoBlock(Module):
    def __init__(self, dim: int, feat_dim: int, heads: int, rng: np.random.Generator, **kw):
        self.pose = StreamBranch(dim, feat_dim, heads, rng, **kw)
        self.mesh = StreamBranch(dim, feat_dim, heads, rng, **kw)

    def __call__(self, x_pose: Tensor, x_mesh: Tensor, f: Tensor) -> tuple[Tensor, Tensor]:
        p = self.pose.norm_cross(x_pose, f)
        m = self.mesh.norm_cross(x_mesh, f)
        mesh_to_pose = self.pose.cross_attn(p, m) + x_pose
        pose_to_mesh = self.mesh.cross_attn(m, p) + x_mesh
        return self.pose.refine(mesh_to_pose, f), self.mesh.refine(pose_to_mesh, f)

    def set_recording(self, on: bool) -> None:
        for attn in (self.pose.cross_attn, self.mesh.cross_attn,
                     self.pose.self_attn, self.mesh.self_attn):
            attn.record = on
            attn.last_weights = None

    def attention_maps(self) -> dict[str, np.ndarray]:
        """Head-averaged weights from the last recorded call, keyed by direction.

        ``mesh_to_pose`` has pose queries over mesh keys (J x V'), and so on.
        """
        sources = {
            "mesh_to_pose": self.pose.cross_attn,
            "pose_to_mesh": self.mesh.cross_attn,
            "mesh_to_mesh": self.mesh.self_attn,
            "pose_to_pose": self.pose.self_attn,
        }
        maps = {}
        for key, attn in sources.items():
            if attn.last_weights is None:
                raise RuntimeError("no attention recorded; call set_recording(True) and run forward")
            maps[key] = attn.last_weights.mean(axis=-3)
        return maps


def coevo_block(x_pose: Tensor, x_mesh: Tensor, f: Tensor, params: CoEvoBlock):
    return params(x_pose, x_mesh, f)


class Decoder(Module):
    def __init__(self, num_joints: int, num_coarse: int, num_vertices: int, feat_dim: int,
                 dim: int, depth: int, heads: int, upsample_init: np.ndarray,
                 rng: np.random.Generator, residual_rank: int = 8, mlp_ratio: int = 4,
                 adaln_depth: int = 1, adaln_unit_gain: bool = True, adaln_zero_init: bool = True):
        if upsample_init.shape != (num_vertices, num_coarse):
            raise ValueError(f"upsample init must be ({num_vertices}, {num_coarse})")
        self.num_joints, self.num_coarse, self.num_vertices = num_joints, num_coarse, num_vertices
        self.feat_dim, self.dim, self.residual_rank = feat_dim, dim, residual_rank
        self.pose_embed = Linear(3, dim, rng)
        self.vertex_embed = Linear(3, dim, rng)
        self.pose_pos = ad.parameter(rng.normal(0.0, 0.02, size=(num_joints, dim)))
        self.vertex_pos = ad.parameter(rng.normal(0.0, 0.02, size=(num_coarse, dim)))
        self.blocks = [
            CoEvoBlock(dim, feat_dim, heads, rng, mlp_ratio=mlp_ratio, adaln_depth=adaln_depth,
                       adaln_unit_gain=adaln_unit_gain, adaln_zero_init=adaln_zero_init)
            for _ in range(depth)
        ]
        self.pose_head = Linear(dim, 3, rng, zero_init=True)
        self.mesh_head = Linear(dim, 3, rng, zero_init=True)
        self.upsample_weight = ad.parameter(upsample_init.copy())
        self.upsample_bias = ad.parameter(np.zeros((num_vertices, 1)))
        self.residual_in = Linear(feat_dim, 3 * residual_rank, rng)
        self.residual_out = Linear(residual_rank, num_vertices, rng, zero_init=True)

    def embed_tokens(self, pose: Tensor, mesh_init: Tensor) -> tuple[Tensor, Tensor]:
        if pose.shape[-2:] != (self.num_joints, 3) or mesh_init.shape[-2:] != (self.num_coarse, 3):
            raise ValueError(f"bad decoder inputs: pose {pose.shape}, mesh {mesh_init.shape}")
        return (self.pose_embed(pose) + self.pose_pos,
                self.vertex_embed(mesh_init) + self.vertex_pos)

    def decode(self, pose: Tensor, mesh_init: Tensor, f: Tensor) -> tuple[Tensor, Tensor]:
        """-> refined pose (..., J, 3) and coarse mesh (..., V', 3).

        Heads predict offsets from the inputs, so with the zero-initialized
        heads an untrained decoder passes P0 and the nearest-joint mesh through.
        """
        x_pose, x_mesh = self.embed_tokens(pose, mesh_init)
        for block in self.blocks:
            x_pose, x_mesh = block(x_pose, x_mesh, f)
        return self.pose_head(x_pose) + pose, self.mesh_head(x_mesh) + mesh_init

    def upsample_with_residual(self, coarse: Tensor, f: Tensor) -> Tensor:
        """Learned V' -> V map over the vertex axis plus a feature-driven vertex residual."""
        if coarse.shape[-2] != self.num_coarse:
            raise ValueError(f"expected {self.num_coarse} coarse vertices, got {coarse.shape}")
        fine = ad.matmul(self.upsample_weight, coarse) + self.upsample_bias
        # f -> (3, k), transposed use of the k -> V map gives (V, 3)
        r = ad.gelu(self.residual_in(f))
        r = r.reshape(*r.shape[:-1], 3, self.residual_rank)
        residual = self.residual_out(r).swapaxes(-1, -2)
        return fine + residual

    def zero_cross(self, direction: str) -> None:
        """Cut one interaction path in every block by zeroing that MCA's output map.

        ``"mesh_to_pose"`` silences pose queries over mesh tokens, ``"pose_to_mesh"`` the reverse.
        """
        if direction not in ("mesh_to_pose", "pose_to_mesh"):
            raise ValueError(f"unknown direction {direction!r}")
        for block in self.blocks:
            branch = block.pose if direction == "mesh_to_pose" else block.mesh
            branch.cross_attn.w_o.weight.data[...] = 0.0

    def __call__(self, pose: Tensor, mesh_init: Tensor, f: Tensor):
        """-> (pose, coarse mesh, fine mesh)."""
        p, coarse = self.decode(pose, mesh_init, f)
        return p, coarse, self.upsample_with_residual(coarse, f)
