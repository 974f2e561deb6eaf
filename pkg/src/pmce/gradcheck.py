"""Finite-difference checks over every layer type and the whole toy model.

Each case builds a small randomized layer, reduces its output to a scalar
with fixed random weights (so every output coordinate matters) and compares
analytic and central-difference gradients for the inputs and parameters.
Zero-initialized heads are randomized first; at zero they would block the
gradient to everything upstream and the check would be vacuous.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from ._alloc import keep_heap_memory
from .attention import AdaLN, LayerNorm, MLPBlock, MultiHeadAttention
from .autodiff import Tensor
from .body import build_body, nearest_joint_init
from .config import TrainConfig, toy
from .decoder import CoEvoBlock, Decoder
from .feature_stream import FeatureStream, GRUCell
from .losses import loss_edge, loss_joint, loss_joint_int, loss_mesh, loss_normal, total_loss
from .model import PMCE
from .nn import Linear, Module, randomize_
from .pose_stream import PoseStream, TransformerLayer, temporal_layer


@dataclass
class CaseResult:
    name: str
    max_rel_error: float
    checked: int
    seconds: float


def _probe(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.normal(size=shape)


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_axis(ad.hadamard(out, ad.tensor(weights)))


def _check(name: str, forward: Callable[[], Tensor], inputs: list[Tensor], rng,
           max_entries: int | None = None, floor: float = 1e-8) -> CaseResult:
    t0 = time.perf_counter()
    out_shape = forward().shape
    w = _probe(rng, out_shape)
    report = ad.grad_check(lambda: _projected(forward(), w), inputs, floor=floor,
                           max_entries=max_entries, rng=rng)
    return CaseResult(name, report.max_rel_error, report.checked, time.perf_counter() - t0)


def _module_case(name: str, module: Module, call, inputs: list[Tensor], rng,
                 max_entries: int | None = 16, **kw) -> CaseResult:
    randomize_(module, rng)
    return _check(name, call, inputs + module.parameters(), rng, max_entries=max_entries, **kw)


def layer_cases(seed: int = 0) -> list[Callable[[], CaseResult]]:
    """Deferred cases; each returns a CaseResult when called."""
    rng = np.random.default_rng(seed)
    d, d_f, heads = 8, 5, 2

    def x(*shape):
        return ad.parameter(rng.uniform(-1.0, 1.0, size=shape))

    def linear():
        m, a = Linear(4, 3, rng), x(2, 4)
        return _module_case("linear", m, lambda: m(a), [a], rng)

    def msa():
        m, a = MultiHeadAttention(d, heads, rng), x(2, 5, d)
        return _module_case("msa", m, lambda: m(a), [a], rng)

    def mca():
        m, a, b = MultiHeadAttention(d, heads, rng), x(2, 3, d), x(2, 6, d)
        return _module_case("mca", m, lambda: m(a, b), [a, b], rng)

    def layer_norm():
        m, a = LayerNorm(d), x(3, d)
        return _module_case("layer_norm", m, lambda: m(a), [a], rng)

    def ada_ln():
        m, a, f = AdaLN(d, d_f, rng), x(2, 4, d), x(2, d_f)
        return _module_case("ada_ln", m, lambda: m(a, f), [a, f], rng)

    def mlp():
        m, a = MLPBlock(d, rng, ratio=2), x(3, d)
        return _module_case("mlp_gelu", m, lambda: m(a), [a], rng)

    def mlp_relu():
        m, a = MLPBlock(d, rng, ratio=2, activation="relu"), x(3, d)
        return _module_case("mlp_relu", m, lambda: m(a), [a], rng)

    def mlp_exact():
        m, a = MLPBlock(d, rng, ratio=2, activation="gelu_exact"), x(3, d)
        return _module_case("mlp_gelu_exact", m, lambda: m(a), [a], rng)

    def transformer():
        m, a = TransformerLayer(d, heads, rng, mlp_ratio=2), x(2, 3, 4, d)
        return _module_case("temporal_layer", m, lambda: temporal_layer(a, m), [a], rng)

    def gru():
        m, a, h = GRUCell(d_f, 4, rng), x(2, d_f), x(2, 4)
        return _module_case("gru_cell", m, lambda: m(a, h), [a, h], rng)

    def feature_stream():
        m, a = FeatureStream(d_f, 4, rng), x(2, 5, d_f)
        return _module_case("feature_stream", m, lambda: m(a), [a], rng)

    def pose_stream():
        m = PoseStream(4, 3, d_f, d, 1, heads, rng, mlp_ratio=2)
        a, f = x(2, 4, 3, 2), x(2, 4, d_f)
        return _module_case("pose_stream", m, lambda: m(a, f), [a, f], rng)

    def coevo():
        m = CoEvoBlock(d, d_f, heads, rng, mlp_ratio=2)
        p, v, f = x(2, 3, d), x(2, 5, d), x(2, d_f)
        return _module_case("coevo_block", m, lambda: ad.concat(list(m(p, v, f)), axis=-2), [p, v, f], rng)

    def decoder():
        init = np.abs(rng.normal(size=(7, 5)))
        init /= init.sum(axis=1, keepdims=True)
        m = Decoder(3, 5, 7, d_f, d, 1, heads, init, rng, residual_rank=2, mlp_ratio=2)
        p, v, f = x(2, 3, 3), x(2, 5, 3), x(2, d_f)

        def run():
            pose, coarse, mesh = m(p, v, f)
            return ad.concat([pose, coarse, mesh], axis=-2)

        return _module_case("decoder", m, run, [p, v, f], rng)

    return [linear, msa, mca, layer_norm, ada_ln, mlp, mlp_relu, mlp_exact, transformer, gru,
            feature_stream, pose_stream, coevo, decoder]


def loss_cases(seed: int = 0) -> list[Callable[[], CaseResult]]:
    rng = np.random.default_rng(seed)
    body = build_body(toy().body_config())
    gt = body.shaped_template(1.05, 0.9)[None] - body.rest_joints()[0]
    joints_gt = body.regressor @ gt[0]

    def mesh_pred():
        return ad.parameter(gt + 0.05 * rng.normal(size=gt.shape))

    def single(name, fn):
        def case():
            m = mesh_pred()
            t0 = time.perf_counter()
            report = ad.grad_check(lambda: fn(m), [m], max_entries=60, rng=rng)
            return CaseResult(name, report.max_rel_error, report.checked, time.perf_counter() - t0)
        return case

    faces = body.faces
    return [
        single("loss_mesh", lambda m: loss_mesh(m, gt)),
        single("loss_joint", lambda m: loss_joint(m, body.regressor, joints_gt[None])),
        single("loss_normal", lambda m: loss_normal(m, gt, faces)),
        single("loss_edge", lambda m: loss_edge(m, gt, faces)),
        single("loss_joint_int", lambda m: loss_joint_int(ad.matmul(ad.tensor(body.regressor), m),
                                                           joints_gt[None])),
        single("nearest_joint_init", lambda m: ad.sum_axis(
            ad.abs_(nearest_joint_init(body, ad.matmul(ad.tensor(body.regressor), m))))),
    ]


def directional_check(f: Callable[[], Tensor], inputs: list[Tensor], rng: np.random.Generator,
                      step: float = 1e-5, floor: float = 1e-8) -> tuple[float, int]:
    """Per input tensor, compare <grad, v> with a central difference along a random v.

    A single coordinate of a deep network can carry a gradient near the
    roundoff floor of the loss value; the projection onto a dense direction
    sums many of them and stays well above it.
    """
    for x in inputs:
        x.zero_grad()
    ad.backward(f())
    worst = 0.0
    for x in inputs:
        g = np.zeros_like(x.data) if x.grad is None else x.grad
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        orig = x.data.copy()
        try:
            with ad.no_grad():
                x.data[...] = orig + step * v
                up = float(f().data)
                x.data[...] = orig - step * v
                down = float(f().data)
        finally:
            x.data[...] = orig
        analytic = float(np.vdot(g, v))
        numeric = (up - down) / (2.0 * step)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic) + abs(numeric), floor))
    return worst, len(inputs)


def model_case(cfg: TrainConfig | None = None, seed: int = 0, windows: int = 1,
               scale: float = 0.2) -> Callable[[], CaseResult]:
    """Full toy network under the stage-two objective, one random direction per tensor."""
    cfg = cfg or toy()

    def case():
        rng = np.random.default_rng(seed)
        body = build_body(cfg.body_config())
        model = PMCE(cfg, body, seed)
        randomize_(model, rng, scale=scale)
        T, J = cfg.num_frames, body.num_joints
        pose_2d = rng.uniform(-0.8, 0.8, size=(windows, T, J, 2))
        feats = rng.uniform(-1.0, 1.0, size=(windows, T, cfg.feat_dim))
        mesh_gt = body.shaped_template()[None].repeat(windows, 0)
        pose_gt = (body.regressor @ mesh_gt[0])[None].repeat(windows, 0)

        def forward():
            pred = model(pose_2d, feats)
            total, _ = total_loss(pred.mesh, pred.pose, mesh_gt, pose_gt, body.regressor,
                                  body.faces, cfg.loss_weights(), cfg.surface_reduction)
            return total

        t0 = time.perf_counter()
        worst, n = directional_check(forward, model.parameters(), rng)
        return CaseResult("full_model", worst, n, time.perf_counter() - t0)

    return case


def run_suite(seed: int = 0, cfg: TrainConfig | None = None, include_model: bool = True) -> list[CaseResult]:
    keep_heap_memory()
    cases = layer_cases(seed) + loss_cases(seed)
    if include_model:
        cases.append(model_case(cfg, seed))
    return [c() for c in cases]
