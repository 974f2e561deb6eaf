"""Parameter containers and the plain linear layer."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .autodiff import Tensor, gelu, gelu_exact, linear, parameter, relu

ACTIVATIONS = {"gelu": gelu, "gelu_exact": gelu_exact, "relu": relu}


class Module:
    """Walks attributes in definition order to find parameters.

    Parameters are ``Tensor`` attributes with ``requires_grad``; submodules may
    be attributes or sit in lists.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> list[str]:
        """Copy matching arrays in place; returns the names that were loaded."""
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        loaded = []
        for name, value in state.items():
            if name not in own:
                continue
            if own[name].shape != value.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {own[name].shape} vs {value.shape}"
                )
            own[name].data[...] = value
            loaded.append(name)
        return loaded

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Linear(Module):
    """``y = x W + b`` over the last axis, W stored as (in, out)."""

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        rng: np.random.Generator,
        bias: bool = True,
        zero_init: bool = False,
    ):
        self.in_dim, self.out_dim = in_dim, out_dim
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            w = rng.normal(0.0, 1.0 / np.sqrt(in_dim), size=(in_dim, out_dim))
        self.weight = parameter(w)
        self.bias = parameter(np.zeros(out_dim)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"Linear expects last dim {self.in_dim}, got {x.shape}")
        return linear(x, self.weight, self.bias)


def randomize_(module: Module, rng: np.random.Generator, scale: float = 0.3) -> Module:
    """Overwrite every parameter with N(0, scale^2) noise (tests, grad checks)."""
    for p in module.parameters():
        p.data[...] = rng.normal(0.0, scale, size=p.shape)
    return module
