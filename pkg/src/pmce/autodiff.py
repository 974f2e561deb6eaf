"""Dense float64 tensors with reverse-mode differentiation.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks the recorded graph once in reverse
topological order, accumulating across fan-out, then drops the graph.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Tensor",
    "NonFiniteError",
    "ShapeError",
    "tensor",
    "parameter",
    "add",
    "sub",
    "hadamard",
    "mul_scalar",
    "div",
    "neg",
    "matmul",
    "linear",
    "layer_norm",
    "softmax",
    "relu",
    "gelu",
    "gelu_exact",
    "tanh",
    "sigmoid",
    "sqrt",
    "abs_",
    "sum_axis",
    "mean_axis",
    "std_axis",
    "concat",
    "stack",
    "slice_",
    "take",
    "permute",
    "swapaxes",
    "reshape",
    "broadcast_add",
    "backward",
    "no_grad",
    "grad_check",
    "GradCheckReport",
]


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class NonFiniteError(FloatingPointError):
    """Raised as soon as an op produces NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in leaf tensor {name or ''}".strip())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, other)
        return hadamard(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul_scalar(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_axis(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    @property
    def T(self):
        return swapaxes(self, -1, -2)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _all_finite(x: np.ndarray) -> bool:
    # any NaN/Inf poisons the sum; cheaper than an elementwise mask
    return math.isfinite(float(np.sum(x)))


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    if not _all_finite(data):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = grad_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
        "add",
    )


broadcast_add = add


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
        "sub",
    )


def hadamard(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b, "hadamard")
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
        "hadamard",
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shapes(a, b, "div")
    out = a.data / b.data

    def grad_fn(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _result(out, (a, b), grad_fn, "div")


def mul_scalar(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "mul_scalar")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_K = 0.044715
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU, x/2 (1 + tanh(c (x + k x^3))). Several times cheaper than erf."""
    x = a.data
    x2 = x * x
    t = x2 * _GELU_K
    t += 1.0
    t *= x
    t *= _GELU_C
    np.tanh(t, out=t)
    half = t + 1.0
    half *= 0.5

    def grad_fn(g):
        # d/dx = half + x/2 (1 - t^2) c (1 + 3k x^2), built in place
        d = t * t
        np.subtract(1.0, d, out=d)
        d *= x
        d *= 0.5 * _GELU_C
        du = x2 * (3.0 * _GELU_K)
        du += 1.0
        d *= du
        d += half
        d *= g
        return (d,)

    return _result(x * half, (a,), grad_fn, "gelu")


def gelu_exact(a: Tensor) -> Tensor:
    """x Phi(x) with the Gaussian CDF."""
    x = a.data
    cdf = ndtr(x)

    def grad_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(x * cdf, (a,), grad_fn, "gelu_exact")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so neither branch overflows exp
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def sqrt(a: Tensor) -> Tensor:
    if (a.data < 0).any():
        raise NonFiniteError("sqrt of negative value")
    out = np.sqrt(a.data)

    def grad_fn(g):
        if (out == 0).any():
            raise NonFiniteError("sqrt gradient at zero")
        return (g * 0.5 / out,)

    return _result(out, (a,), grad_fn, "sqrt")


def abs_(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_axis(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), grad_fn, "sum")


def mean_axis(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul_scalar(sum_axis(a, axes, keepdims), 1.0 / count)


def std_axis(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Biased (divide-by-n) standard deviation along one axis.

    The gradient at a zero-spread slice is taken as 0.
    """
    ax = axis % a.ndim
    n = a.shape[ax]
    centered = a.data - a.data.mean(axis=ax, keepdims=True)
    sd = np.sqrt((centered * centered).mean(axis=ax, keepdims=True))

    def grad_fn(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        scale = np.divide(g, n * sd, out=np.zeros_like(sd), where=sd > 0)
        return (centered * scale,)

    out = sd if keepdims else np.squeeze(sd, axis=ax)
    return _result(out, (a,), grad_fn, "std")


# -------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch extents do not broadcast: {a.shape} x {b.shape}") from None

    if b.ndim == 2 and a.ndim > 2:
        # token-wise linear map: fold batch axes into rows
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def grad_fn(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            return ga, (a2.T @ g2 if b.requires_grad else None)

        return _result(out, (a, b), grad_fn, "matmul")

    if a.ndim == 2 and b.ndim > 2:
        # shared left operand (e.g. a fixed regressor applied per sample)
        def grad_fn(g):
            lead = tuple(range(g.ndim - 2))
            ga = np.tensordot(g, b.data, axes=(lead + (g.ndim - 1,), lead + (b.ndim - 1,)))
            return ga, unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)

        return _result(a.data @ b.data, (a, b), grad_fn, "matmul")

    def grad_fn(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _result(a.data @ b.data, (a, b), grad_fn, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis as one node; weight is (in, out)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not fit weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not fit weight {weight.shape}")
    k, n = weight.shape
    x2 = x.data.reshape(-1, k)
    out2 = x2 @ weight.data
    if bias is not None:
        out2 += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        g2 = g.reshape(-1, n)
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if bias.requires_grad else None)

    return _result(out2.reshape(x.shape[:-1] + (n,)), parents, grad_fn, "linear")


def layer_norm(x: Tensor, alpha: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """alpha * (x - mean) / (std + eps) + beta over the last axis, biased std.

    One node for what would otherwise be about ten; alpha and beta broadcast
    against x (per-sample modulation included).
    """
    x, alpha, beta = _as_tensor(x), _as_tensor(alpha), _as_tensor(beta)
    _broadcast_shapes(x, alpha, "layer_norm")
    _broadcast_shapes(x, beta, "layer_norm")
    n = x.shape[-1]
    c = x.data - x.data.mean(axis=-1, keepdims=True)
    sd = np.sqrt((c * c).mean(axis=-1, keepdims=True))
    s = sd + eps
    xhat = c / s
    out = alpha.data * xhat + beta.data

    def grad_fn(g):
        gx = None
        if x.requires_grad:
            gh = g * alpha.data
            # d xhat / d c = I/s - c c^T / (n s^2 sd); zero-spread rows keep only I/s
            proj = np.divide((gh * c).sum(axis=-1, keepdims=True), n * s * s * sd,
                             out=np.zeros_like(sd), where=sd > 0)
            dc = gh / s - proj * c
            gx = dc - dc.mean(axis=-1, keepdims=True)
        ga = unbroadcast(g * xhat, alpha.shape) if alpha.requires_grad else None
        gb = unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, ga, gb

    return _result(out, (x, alpha, beta), grad_fn, "layer_norm")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), grad_fn, "softmax")


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along {axis}: {exc}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _result(out, tuple(tensors), grad_fn, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def grad_fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(out, tuple(tensors), grad_fn, "stack")


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in items)


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]
    basic = _is_basic_index(key)

    def grad_fn(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return _result(np.array(out, dtype=np.float64), (a,), grad_fn, "slice")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % a.ndim
    out = np.take(a.data, idx, axis=ax)

    def grad_fn(g):
        full = np.zeros(np.moveaxis(a.data, ax, 0).shape)
        g0 = np.moveaxis(g, list(range(ax, ax + idx.ndim)), list(range(idx.ndim)))
        np.add.at(full, idx, g0)
        return (np.moveaxis(full, 0, ax),)

    return _result(out, (a,), grad_fn, "take")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "permute"
    )


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    return _result(
        np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes"
    )


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


# ------------------------------------------------------------------- backward

def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor upstream of ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    The graph is released afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological_order(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # interior grads feed only into leaves, so checking here catches any blow-up
            if not _all_finite(g):
                raise NonFiniteError(f"non-finite gradient reaching {node.name or 'a leaf'}")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    for node in order:
        node._parents = ()
        node._backward = None


# ----------------------------------------------------------------- grad check

@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: list[float] = field(default_factory=list)
    checked: int = 0

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def _rel_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-8,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f()`` against central differences.

    ``f`` closes over ``inputs`` and rebuilds the graph on each call. With
    ``max_entries`` only that many coordinates per input are probed, chosen by
    ``rng``. The relative error denominator is floored at ``floor``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for x in inputs:
        x.zero_grad()
    loss = f()
    backward(loss)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]
    rng = rng or np.random.default_rng(0)

    per_input = []
    checked = 0
    for i, x in enumerate(inputs):
        flat = x.data.reshape(-1)
        coords: Iterable[int] = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            coords = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for c in coords:
            orig = flat[c]
            try:
                with no_grad():
                    flat[c] = orig + step
                    up = float(f().data)
                    flat[c] = orig - step
                    down = float(f().data)
            except NonFiniteError as exc:
                raise NonFiniteError(f"input {i}, entry {c}: {exc}") from exc
            finally:
                flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, _rel_error(float(analytic[i].reshape(-1)[c]), numeric, floor))
            checked += 1
        per_input.append(worst)
    return GradCheckReport(max(per_input, default=0.0), per_input, checked)
