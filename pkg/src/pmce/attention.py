"""Scaled dot-product attention, multi-head self/cross attention, LN and AdaLN."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import ACTIVATIONS, Linear, Module

LN_EPS = 1e-6


def attention(q: Tensor, k: Tensor, v: Tensor, record: list | None = None) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    ``d`` is the feature width of ``q``. When ``record`` is a list the
    attention weights are appended to it as a numpy array.
    """
    d = q.shape[-1]
    if k.shape[-1] != d or v.shape[-2] != k.shape[-2]:
        raise ValueError(f"attention shapes disagree: q{q.shape} k{k.shape} v{v.shape}")
    scores = ad.mul_scalar(ad.matmul(q, k.T), 1.0 / math.sqrt(d))
    weights = ad.softmax(scores, axis=-1)
    if record is not None:
        record.append(weights.data.copy())
    return ad.matmul(weights, v)


def _split_heads(x: Tensor, h: int) -> Tensor:
    # (..., n, d) -> (..., h, n, d/h)
    *lead, n, d = x.shape
    return x.reshape(*lead, n, h, d // h).swapaxes(-2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    return x.swapaxes(-2, -3).reshape(*lead, n, h * dh)


class MultiHeadAttention(Module):
    """Projection weights for MSA/MCA: W_q, W_k, W_v and the output map W.

    Projections carry no bias, matching the bare matrices of the formulation.
    """

    def __init__(self, d: int, h: int, rng: np.random.Generator):
        if d % h:
            raise ValueError(f"model dim {d} is not divisible by {h} heads")
        self.d, self.h = d, h
        self.w_q = Linear(d, d, rng, bias=False)
        self.w_k = Linear(d, d, rng, bias=False)
        self.w_v = Linear(d, d, rng, bias=False)
        self.w_o = Linear(d, d, rng, bias=False)
        self.record = False
        self.last_weights: np.ndarray | None = None

    def __call__(self, x: Tensor, y: Tensor | None = None) -> Tensor:
        """Self-attention over ``x``; cross-attention if ``y`` is given.

        Queries always come from ``x``; keys and values from ``y``.
        """
        y = x if y is None else y
        if x.shape[-1] != self.d or y.shape[-1] != self.d:
            raise ValueError(f"expected feature dim {self.d}, got {x.shape} and {y.shape}")
        q = _split_heads(self.w_q(x), self.h)
        k = _split_heads(self.w_k(y), self.h)
        v = _split_heads(self.w_v(y), self.h)
        rec = [] if self.record else None
        heads = attention(q, k, v, rec)
        if rec:
            self.last_weights = rec[0]
        return self.w_o(_merge_heads(heads))


def msa(x: Tensor, params: MultiHeadAttention) -> Tensor:
    return params(x)


def mca(x: Tensor, y: Tensor, params: MultiHeadAttention) -> Tensor:
    return params(x, y)


def normalize(x: Tensor, eps: float = LN_EPS) -> Tensor:
    """(x - mean) / (std + eps) per token, biased std."""
    mu = ad.mean_axis(x, -1, keepdims=True)
    sigma = ad.std_axis(x, -1, keepdims=True)
    return ad.div(ad.sub(x, mu), ad.add(sigma, eps))


def layer_norm(x: Tensor, alpha: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """alpha * normalize(x) + beta, computed as a single fused node."""
    return ad.layer_norm(x, alpha, beta, eps)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.d = d
        self.alpha = ad.parameter(np.ones(d))
        self.beta = ad.parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.alpha, self.beta)


class ConditionMap(Module):
    """Maps the image feature to a d-vector; ``depth`` linear layers, GELU between."""

    def __init__(self, d_f: int, d: int, rng: np.random.Generator, depth: int = 1,
                 zero_init: bool = True):
        dims = [d_f] * depth + [d]
        self.layers = [
            Linear(dims[i], dims[i + 1], rng, zero_init=zero_init and i == depth - 1)
            for i in range(depth)
        ]

    def __call__(self, f: Tensor) -> Tensor:
        out = f
        for i, layer in enumerate(self.layers):
            if i:
                out = ad.gelu(out)
            out = layer(out)
        return out


class AdaLN(Module):
    """Normalization whose scale and shift are generated from an image feature.

    With ``unit_gain`` the scale is ``1 + map_alpha(f)``, so a zero-initialized
    map starts out as plain unit-scale normalization.
    """

    def __init__(self, d: int, d_f: int, rng: np.random.Generator, depth: int = 1,
                 unit_gain: bool = True, zero_init: bool = True):
        self.d, self.d_f = d, d_f
        self.unit_gain = unit_gain
        self.map_alpha = ConditionMap(d_f, d, rng, depth, zero_init)
        self.map_beta = ConditionMap(d_f, d, rng, depth, zero_init)

    def modulation(self, f: Tensor) -> tuple[Tensor, Tensor]:
        """Per-call (alpha, beta), shaped (..., 1, d) to broadcast over tokens."""
        if f.shape[-1] != self.d_f:
            raise ValueError(f"image feature must have dim {self.d_f}, got {f.shape}")
        alpha = self.map_alpha(f)
        if self.unit_gain:
            alpha = ad.add(alpha, 1.0)
        beta = self.map_beta(f)
        if f.ndim > 1:
            alpha = alpha.reshape(*alpha.shape[:-1], 1, self.d)
            beta = beta.reshape(*beta.shape[:-1], 1, self.d)
        return alpha, beta

    def __call__(self, x: Tensor, f: Tensor) -> Tensor:
        if x.shape[-1] != self.d:
            raise ValueError(f"AdaLN expects token dim {self.d}, got {x.shape}")
        alpha, beta = self.modulation(f)
        return layer_norm(x, alpha, beta)


def ada_ln(x: Tensor, f: Tensor, params: AdaLN) -> Tensor:
    return params(x, f)


class MLPBlock(Module):
    """linear -> activation -> linear with hidden width ``ratio * d``."""

    def __init__(self, d: int, rng: np.random.Generator, ratio: int = 4,
                 activation: str = "gelu"):
        self.fc1 = Linear(d, ratio * d, rng)
        self.fc2 = Linear(ratio * d, d, rng)
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ACTIVATIONS[self.activation](self.fc1(x)))


def mlp_block(x: Tensor, params: MLPBlock) -> Tensor:
    return params(x)
