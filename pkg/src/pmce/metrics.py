"""Evaluation metrics: MPJPE, PA-MPJPE, PVE and acceleration error."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np


@dataclass
class SimilarityTransform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    translation_only: bool = False

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation


def procrustes_transform(pred: np.ndarray, gt: np.ndarray, rank_tol: float = 1e-10) -> SimilarityTransform:
    """Least-squares similarity (s > 0, det R = +1, t) taking ``pred`` onto ``gt``.

    Rank-deficient inputs fall back to translation only (flagged).
    """
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"procrustes needs matching (N, 3) inputs, got {pred.shape} and {gt.shape}")
    mu_p, mu_g = pred.mean(axis=0), gt.mean(axis=0)
    x, y = pred - mu_p, gt - mu_g
    var_x = (x * x).sum()
    cov = y.T @ x
    u, sv, vt = np.linalg.svd(cov)
    scale_ref = max(var_x, (y * y).sum(), 1e-300)
    if len(pred) < 3 or sv[1] <= rank_tol * scale_ref:
        return SimilarityTransform(1.0, np.eye(3), mu_g - mu_p, translation_only=True)
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(u) * np.linalg.det(vt)) or 1.0
    rot = (u * d) @ vt
    s = float((sv * d).sum() / var_x)
    return SimilarityTransform(s, rot, mu_g - s * rot @ mu_p)


def procrustes_align(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return procrustes_transform(pred, gt).apply(np.asarray(pred, dtype=np.float64))


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(pred) - np.asarray(gt), axis=-1).mean())


def pa_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.ndim == 2:
        pred, gt = pred[None], gt[None]
    aligned = np.stack([procrustes_align(p, g) for p, g in zip(pred, gt)])
    return mpjpe(aligned, gt)


def accel_error(pred_seq: np.ndarray, gt_seq: np.ndarray, fps: float = 1.0) -> float | None:
    """Mean ||second difference of pred - second difference of gt|| * fps^2; None below 3 frames."""
    pred_seq, gt_seq = np.asarray(pred_seq), np.asarray(gt_seq)
    if len(pred_seq) < 3:
        return None
    acc_p = pred_seq[2:] - 2 * pred_seq[1:-1] + pred_seq[:-2]
    acc_g = gt_seq[2:] - 2 * gt_seq[1:-1] + gt_seq[:-2]
    return float(np.linalg.norm(acc_p - acc_g, axis=-1).mean() * fps**2)


@dataclass
class EvaluationReport:
    mpjpe: float
    pa_mpjpe: float
    pve: float
    accel: float | None = None
    frames: int = 0

    def to_text(self) -> str:
        return "".join(f"{k} {v}\n" for k, v in self.as_dict().items())

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    def save(self, path) -> None:
        path = Path(path)
        path.with_suffix(".txt").write_text(self.to_text())
        path.with_suffix(".json").write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    @classmethod
    def from_text(cls, text: str) -> "EvaluationReport":
        values = {}
        for line in text.splitlines():
            if line.strip():
                key, value = line.split()
                values[key] = int(value) if key == "frames" else float(value)
        return cls(**values)


def metrics(pred_joints, pred_mesh, gt_joints, gt_mesh, fps: float = 1.0) -> EvaluationReport:
    """Sequence-level report; inputs are (N, J, 3) and (N, V, 3) per-frame arrays."""
    pred_joints, gt_joints = np.asarray(pred_joints), np.asarray(gt_joints)
    pred_mesh, gt_mesh = np.asarray(pred_mesh), np.asarray(gt_mesh)
    if pred_joints.shape != gt_joints.shape or pred_mesh.shape != gt_mesh.shape:
        raise ValueError("prediction and ground-truth sequences differ in shape")
    return EvaluationReport(
        mpjpe=mpjpe(pred_joints, gt_joints),
        pa_mpjpe=pa_mpjpe(pred_joints, gt_joints),
        pve=mpjpe(pred_mesh, gt_mesh),
        accel=accel_error(pred_joints, gt_joints, fps),
        frames=len(pred_joints),
    )


def aggregate_reports(reports: list[EvaluationReport]) -> EvaluationReport:
    """Frame-weighted mean of per-clip reports (ACCEL over clips that have it)."""
    frames = np.array([r.frames for r in reports], dtype=np.float64)
    w = frames / frames.sum()
    with_accel = [(r.accel, r.frames) for r in reports if r.accel is not None]
    accel = None
    if with_accel:
        a, n = np.array(with_accel).T
        accel = float((a * n).sum() / n.sum())
    return EvaluationReport(
        mpjpe=float(sum(wi * r.mpjpe for wi, r in zip(w, reports))),
        pa_mpjpe=float(sum(wi * r.pa_mpjpe for wi, r in zip(w, reports))),
        pve=float(sum(wi * r.pve for wi, r in zip(w, reports))),
        accel=accel,
        frames=int(frames.sum()),
    )
