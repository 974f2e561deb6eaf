"""Bi-directional GRU that condenses per-frame image features into one mid-frame feature."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Linear, Module


class GRUCell(Module):
    """Gated recurrent cell, reset gate applied before the hidden projection.

    z = sig(W_z x + U_z h + b_z), r = sig(W_r x + U_r h + b_r),
    c = tanh(W_c x + U_c (r * h) + b_c), h' = (1 - z) * h + z * c
    """

    def __init__(self, input_dim: int, hidden_dim: int, rng: np.random.Generator):
        self.input_dim, self.hidden_dim = input_dim, hidden_dim
        bound = 1.0 / np.sqrt(hidden_dim)

        def uniform(*shape):
            return ad.parameter(rng.uniform(-bound, bound, size=shape))

        self.w_z, self.u_z, self.b_z = uniform(input_dim, hidden_dim), uniform(hidden_dim, hidden_dim), uniform(hidden_dim)
        self.w_r, self.u_r, self.b_r = uniform(input_dim, hidden_dim), uniform(hidden_dim, hidden_dim), uniform(hidden_dim)
        self.w_c, self.u_c, self.b_c = uniform(input_dim, hidden_dim), uniform(hidden_dim, hidden_dim), uniform(hidden_dim)

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        if x.shape[-1] != self.input_dim or h.shape[-1] != self.hidden_dim:
            raise ValueError(f"GRU cell got x{x.shape}, h{h.shape}")
        z = ad.sigmoid(_affine(x, self.w_z) + _affine(h, self.u_z) + self.b_z)
        r = ad.sigmoid(_affine(x, self.w_r) + _affine(h, self.u_r) + self.b_r)
        c = ad.tanh(_affine(x, self.w_c) + _affine(r * h, self.u_c) + self.b_c)
        return h + z * (c - h)


def _affine(x: Tensor, w: Tensor) -> Tensor:
    if x.ndim == 1:
        return ad.matmul(x.reshape(1, -1), w).reshape(-1)
    return ad.matmul(x, w)


def gru_cell(x_t: Tensor, h_prev: Tensor, params: GRUCell) -> Tensor:
    return params(x_t, h_prev)


class FeatureStream(Module):
    """Runs both directions from zero states and projects the concatenated
    states back to the feature width.

    ``readout="mid"`` reads both directions at frame ``T // 2``; ``"end"``
    takes each direction's final state instead.
    """

    def __init__(self, feat_dim: int, hidden_dim: int, rng: np.random.Generator,
                 readout: str = "mid"):
        if readout not in ("mid", "end"):
            raise ValueError(f"unknown readout {readout!r}")
        self.feat_dim, self.hidden_dim = feat_dim, hidden_dim
        self.forward_cell = GRUCell(feat_dim, hidden_dim, rng)
        self.backward_cell = GRUCell(feat_dim, hidden_dim, rng)
        self.proj = Linear(2 * hidden_dim, feat_dim, rng)
        self.readout = readout

    def __call__(self, features: Tensor) -> Tensor:
        """features (..., T, D_f) -> f (..., D_f)."""
        if features.shape[-1] != self.feat_dim:
            raise ValueError(f"expected feature dim {self.feat_dim}, got {features.shape}")
        num_frames = features.shape[-2]
        if num_frames < 1:
            raise ValueError("empty feature sequence")
        mid = num_frames // 2
        stop_fwd, stop_bwd = (mid, mid) if self.readout == "mid" else (num_frames - 1, 0)
        state_shape = features.shape[:-2] + (self.hidden_dim,)

        h = ad.tensor(np.zeros(state_shape))
        for t in range(stop_fwd + 1):
            h = self.forward_cell(features[..., t, :], h)
        h_fwd = h

        h = ad.tensor(np.zeros(state_shape))
        for t in range(num_frames - 1, stop_bwd - 1, -1):
            h = self.backward_cell(features[..., t, :], h)
        h_bwd = h
        return self.proj(ad.concat([h_fwd, h_bwd], axis=-1))


def aggregate(features: Tensor, params: FeatureStream) -> Tensor:
    return params(features)
