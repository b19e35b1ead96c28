"""Dense float64 tensors with reverse-mode automatic differentiation.

Forward operations optionally record onto an explicit tape. The tape is a
flat list in execution order, which is already a topological order, so the
backward pass is a single reverse sweep that visits each recorded operation
exactly once. Inference code simply runs without an active tape and pays no
recording cost.

Everything is float64 and single-threaded by design: the package trades
throughput for exact reproducibility and easy gradient checking.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import NumericError

Array = np.ndarray

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Stack of active tapes; ops record onto the innermost one.
_TAPES: list["Tape"] = []


def _as_array(data) -> Array:
    # ascontiguousarray would promote 0-d scalars to shape (1,); keep them 0-d.
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def _check_finite(data: Array, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite output of '{op}'")


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar. Scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)


def as_tensor(value) -> Tensor:
    """Wrap a scalar or array as a constant tensor; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def parameter(data, rng=None) -> Tensor:
    """A tensor that participates in gradient computation."""
    return Tensor(data, requires_grad=True)


class _Node:
    """One recorded primitive application."""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], output: Tensor,
                 backward_fn: Callable[[Array], tuple]):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations for one backward pass.

    Use as a context manager around forward code whose gradients are
    needed. Calling backward twice on the same tape is rejected; build a
    fresh tape per training step instead.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPES.pop()
        assert popped is self

    def record(self, node: _Node) -> None:
        self._nodes.append(node)

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor, params: Sequence[Tensor] | None = None) -> None:
        """Accumulate d(loss)/d(input) into .grad of every reachable tensor.

        `loss` must be scalar. If `params` is given, each listed tensor is
        guaranteed a gradient buffer afterwards; parameters the loss never
        touched end up with exact zeros rather than None.
        """
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        loss.accumulate_grad(np.ones((), dtype=np.float64))
        for node in reversed(self._nodes):
            out_grad = node.output.grad
            if out_grad is None:
                continue
            grads = node.backward_fn(out_grad)
            for inp, g in zip(node.inputs, grads):
                if g is None or not inp.requires_grad:
                    continue
                inp.accumulate_grad(g)
        if params is not None:
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)


def backward(loss: Tensor, tape: Tape, params: Sequence[Tensor] | None = None) -> None:
    tape.backward(loss, params=params)


def _record(op: str, out_data: Array, inputs: tuple[Tensor, ...],
            backward_fn: Callable[[Array], tuple]) -> Tensor:
    _check_finite(out_data, op)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=requires)
    if requires and _TAPES:
        _TAPES[-1].record(_Node(op, inputs, out, backward_fn))
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce `grad` back to `shape` by summing over broadcast axes."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record("add", out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record("sub", out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record("mul", out, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g / bd, ad.shape)
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape)
        return ga, gb

    return _record("div", out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _record("exp", out, (a,), bw)


def tlog(a: Tensor) -> Tensor:
    out = np.log(a.data)
    ad = a.data

    def bw(g):
        return (g / ad,)

    return _record("log", out, (a,), bw)


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out,)

    return _record("sqrt", out, (a,), bw)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    mask = a.data > 0.0

    def bw(g):
        return (g * mask,)

    return _record("relu", out, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)

    def bw(g):
        return (g * (cdf + x * pdf),)

    return _record("gelu", out, (a,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; scale kept entries by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = a.data * keep

    def bw(g):
        return (g * keep,)

    return _record("dropout", out, (a,), bw)


# ---------------------------------------------------------------------------
# Linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    out = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape)
        return ga, gb

    return _record("matmul", out, (a, b), bw)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _record("transpose", out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    orig = a.data.shape
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(orig),)

    return _record("reshape", out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        pieces = []
        for i in range(len(tensors)):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(idx)])
        return tuple(pieces)

    return _record("concat", out, tensors, bw)


def slice_axis(a: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx]
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _record("slice", out, (a,), bw)


def split(a: Tensor, sections: int, axis: int = 0) -> list[Tensor]:
    """Split into `sections` equal parts along `axis`."""
    n = a.data.shape[axis]
    if n % sections != 0:
        raise ValueError(f"cannot split axis of length {n} into {sections} parts")
    step = n // sections
    return [slice_axis(a, i * step, (i + 1) * step, axis=axis) for i in range(sections)]


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather rows along `axis`; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(a.data, idx, axis=axis)
    shape = a.data.shape

    def bw(g):
        full = np.zeros(shape, dtype=np.float64)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return _record("take", out, (a,), bw)


# ---------------------------------------------------------------------------
# Reductions and normalizations


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", out, (a,), bw)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / count,)

    return _record("mean", out, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record("softmax", out, (a,), bw)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    s = np.exp(x - m).sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def bw(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * np.exp(x - out_k),)

    return _record("logsumexp", out, (a,), bw)


def masked_logsumexp(a: Tensor, mask, axis: int = -1) -> Tensor:
    """log-sum-exp over entries where `mask` is true.

    `mask` is a constant boolean array broadcastable to `a`; rows with no
    selected entry are rejected.
    """
    x = a.data
    m_full = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m_full.any(axis=axis).all():
        raise NumericError("masked_logsumexp: empty selection on some rows")
    neg = np.where(m_full, x, -np.inf)
    mx = neg.max(axis=axis, keepdims=True)
    e = np.where(m_full, np.exp(x - mx), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out_k = mx + np.log(s)
    out = np.squeeze(out_k, axis=axis)

    def bw(g):
        gk = np.expand_dims(g, axis)
        return (gk * np.where(m_full, np.exp(x - out_k), 0.0),)

    return _record("masked_logsumexp", out, (a,), bw)


# ---------------------------------------------------------------------------
# Composite layers built from primitives


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = div(centered, tsqrt(add(var, as_tensor(eps))))
    return add(mul(inv, gain), bias)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale vectors along `axis` to unit Euclidean norm."""
    sq = tsum(mul(x, x), axis=axis, keepdims=True)
    return div(x, tsqrt(add(sq, as_tensor(eps))))


# ---------------------------------------------------------------------------
# Parameter initialization


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator,
                   fan_in: int | None = None, fan_out: int | None = None) -> Tensor:
    """Xavier/Glorot uniform init; fans default to the trailing two dims."""
    if fan_in is None or fan_out is None:
        if len(shape) < 2:
            raise ValueError("xavier_uniform needs explicit fans for 1-d shapes")
        fan_in = shape[-2] if fan_in is None else fan_in
        fan_out = shape[-1] if fan_out is None else fan_out
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones_param(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
