"""Adam with global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, Tensor


def cosine_lr(base: float, step: int, total: int, floor: float = 0.0) -> float:
    """Half-cosine from ``base`` at step 0 down to ``floor * base`` at ``total``."""
    if total <= 0:
        return base
    frac = min(max(step / total, 0.0), 1.0)
    return base * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def global_norm(grads: list[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale so the joint L2 norm is at most ``max_norm``. Zero gradients pass through."""
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NonFiniteError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_grad: float = 1.0


class Adam:
    def __init__(self, params: list[Tensor], config: AdamConfig = AdamConfig()):
        self.params = list(params)
        self.config = config
        self.step_count = 0
        self.lr = config.lr
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> float:
        """Apply one update from the accumulated ``.grad``; returns the pre-clip norm."""
        c = self.config
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        grads, norm = clip_by_global_norm(grads, c.clip_grad)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - c.beta1**t
        bc2 = 1.0 - c.beta2**t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m.copy()
            out[f"v.{i}"] = v.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(state["step"][0])
        for i in range(len(self.params)):
            if state[f"m.{i}"].shape != self.m[i].shape:
                raise ValueError(f"optimizer moment {i} has the wrong shape")
            self.m[i][...] = state[f"m.{i}"]
            self.v[i][...] = state[f"v.{i}"]
