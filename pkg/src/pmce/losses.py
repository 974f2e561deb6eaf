"""Training losses. All take tensors with optional leading batch axes and
average over them; the per-sample reductions follow the loss definitions
(mean over joints/vertices for L1 terms, plain sums over faces for surface
terms).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .body import face_normals

log = logging.getLogger(__name__)

EDGE_EPS = 1e-8
# vertex pairs {i, j} of each triangle, in face-local indices
_PAIRS = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class LossWeights:
    mesh: float = 1.0
    joint: float = 1.0
    normal: float = 0.1
    edge: float = 20.0

    def __post_init__(self):
        if min(self.mesh, self.joint, self.normal, self.edge) < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_same(a: Tensor, b, what: str) -> None:
    if tuple(a.shape) != tuple(np.shape(b)):
        raise ValueError(f"{what}: prediction {a.shape} vs target {np.shape(b)}")


def _batch_mean(per_sample: Tensor) -> Tensor:
    return ad.mean_axis(per_sample) if per_sample.ndim else per_sample


def _l1_per_item(pred: Tensor, target) -> Tensor:
    """(1/N) sum_i ||target_i - pred_i||_1 over the item axis (-2)."""
    diff = ad.abs_(ad.sub(pred, ad.tensor(target)))
    n = pred.shape[-2]
    return _batch_mean(ad.mul_scalar(ad.sum_axis(diff, (-1, -2)), 1.0 / n))


def loss_joint_int(pose0: Tensor, pose_gt) -> Tensor:
    _check_same(pose0, pose_gt, "loss_joint_int")
    return _l1_per_item(pose0, pose_gt)


def loss_mesh(mesh: Tensor, mesh_gt) -> Tensor:
    _check_same(mesh, mesh_gt, "loss_mesh")
    return _l1_per_item(mesh, mesh_gt)


def loss_joint(mesh: Tensor, regressor: np.ndarray, pose_gt) -> Tensor:
    if mesh.shape[-2] != regressor.shape[1]:
        raise ValueError(f"regressor expects {regressor.shape[1]} vertices, got {mesh.shape}")
    joints = ad.matmul(ad.tensor(regressor), mesh)
    _check_same(joints, pose_gt, "loss_joint")
    return _l1_per_item(joints, pose_gt)


def _pair_vectors(mesh: Tensor, faces: np.ndarray) -> list[Tensor]:
    return [
        ad.sub(ad.take(mesh, faces[:, i], axis=-2), ad.take(mesh, faces[:, j], axis=-2))
        for i, j in _PAIRS
    ]


def _safe_length(e: Tensor) -> Tensor:
    length = ad.sqrt(ad.add(ad.sum_axis(ad.hadamard(e, e), -1), EDGE_EPS**2))
    short = int((length.data < 10 * EDGE_EPS).sum())
    if short:
        log.debug("%d predicted edges have near-zero length", short)
    return length


def _surface_reduce(total: Tensor, num_faces: int, reduction: str) -> Tensor:
    if reduction == "sum":
        return _batch_mean(total)
    if reduction == "mean":
        return _batch_mean(ad.mul_scalar(total, 1.0 / num_faces))
    raise ValueError(f"unknown surface reduction {reduction!r}")


def loss_normal(mesh: Tensor, mesh_gt, faces: np.ndarray, reduction: str = "sum") -> Tensor:
    """sum_f sum_{i,j in f} |<(m_i - m_j)/||m_i - m_j||, n_gt(f)>|.

    ``reduction="mean"`` divides the face sum by the face count.
    """
    _check_same(mesh, mesh_gt, "loss_normal")
    normals, _ = face_normals(mesh_gt, faces)
    n_gt = ad.tensor(normals)
    total = None
    for e in _pair_vectors(mesh, faces):
        unit = ad.div(e, _safe_length(e).reshape(*e.shape[:-1], 1))
        cos = ad.abs_(ad.sum_axis(ad.hadamard(unit, n_gt), -1))
        term = ad.sum_axis(cos, -1)
        total = term if total is None else ad.add(total, term)
    return _surface_reduce(total, len(faces), reduction)


def loss_edge(mesh: Tensor, mesh_gt, faces: np.ndarray, reduction: str = "sum") -> Tensor:
    """sum_f sum_{i,j in f} | ||gt_i - gt_j|| - ||m_i - m_j|| |, or its face mean."""
    _check_same(mesh, mesh_gt, "loss_edge")
    gt = np.asarray(mesh_gt)
    total = None
    for (i, j), e in zip(_PAIRS, _pair_vectors(mesh, faces)):
        gt_len = np.linalg.norm(gt[..., faces[:, i], :] - gt[..., faces[:, j], :], axis=-1)
        term = ad.sum_axis(ad.abs_(ad.sub(_safe_length(e), gt_len)), -1)
        total = term if total is None else ad.add(total, term)
    return _surface_reduce(total, len(faces), reduction)


def weighted_sum(components: dict[str, Tensor | float], weights: LossWeights):
    """lambda_m L_mesh + lambda_j L_joint + lambda_n L_normal + lambda_e L_edge.

    A ``pose`` component, when present, is the direct supervision of the
    decoder's output pose and shares the joint weight.
    """
    total = (
        weights.mesh * components["mesh"]
        + weights.joint * components["joint"]
        + weights.normal * components["normal"]
        + weights.edge * components["edge"]
    )
    if "pose" in components:
        total = total + weights.joint * components["pose"]
    return total


def total_loss(mesh: Tensor, pose: Tensor | None, mesh_gt, pose_gt, regressor: np.ndarray,
               faces: np.ndarray, weights: LossWeights = LossWeights(), surface_reduction: str = "sum"):
    """Stage-two objective -> (total, components). ``pose=None`` drops the direct pose term."""
    components = {
        "mesh": loss_mesh(mesh, mesh_gt),
        "joint": loss_joint(mesh, regressor, pose_gt),
        "normal": loss_normal(mesh, mesh_gt, faces, surface_reduction),
        "edge": loss_edge(mesh, mesh_gt, faces, surface_reduction),
    }
    if pose is not None:
        components["pose"] = loss_joint_int(pose, pose_gt)
    return weighted_sum(components, weights), components
