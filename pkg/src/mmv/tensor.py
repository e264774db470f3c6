"""Dense tensors with tape-based reverse-mode automatic differentiation.

A :class:`Tensor` is an immutable wrapper around a float numpy array. While a
:class:`GradientTape` is active, every op whose inputs require gradients
appends a record ``(output, inputs, vjp)`` to the tape. ``tape.gradient``
replays those records in reverse recording order, so gradient accumulation
order is fixed and results are bit-reproducible.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from . import _kernels
from .errors import (
    LossNotOnTapeError,
    LossNotScalarError,
    NonFiniteError,
    ShapeMismatchError,
    UnknownOpError,
    ValidationError,
)

_FLOATS = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOATS:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.shape[0]

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
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# ---------------------------------------------------------------- tape

_TAPES: list["GradientTape"] = []
check_finite = True


class GradientTape:
    """Ordered record of executed differentiable ops.

    Usage::

        with GradientTape() as tape:
            loss = f(params)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple, Callable]] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, out: Tensor, inputs: tuple, vjp: Callable) -> None:
        self.records.append((out, inputs, vjp))
        self._produced.add(id(out))

    def gradient(self, loss: Tensor, params):
        """Gradients of scalar ``loss`` w.r.t. ``params``.

        ``params`` may be a mapping (returns a dict with the same keys) or a
        sequence (returns a list). Parameters the loss does not depend on get
        zero arrays.
        """
        if loss.data.size != 1:
            raise LossNotScalarError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise LossNotOnTapeError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, vjp in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = vjp(g)
            for inp, ig in zip(inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        if isinstance(params, Mapping):
            return {k: _grad_or_zero(grads, p) for k, p in params.items()}
        return [_grad_or_zero(grads, p) for p in params]


def _grad_or_zero(grads, p):
    g = grads.get(id(p))
    if g is None:
        return np.zeros_like(p.data)
    return np.asarray(g, dtype=p.dtype).reshape(p.shape)


def backward(tape: GradientTape, loss: Tensor, params):
    return tape.gradient(loss, params)


class no_record:
    """Context manager that suspends recording on every active tape."""

    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)
        return False


def _finish(data: np.ndarray, inputs: tuple, vjp: Callable, op: str) -> Tensor:
    if check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: non-finite output")
    req = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=req)
    if req and _TAPES:
        _TAPES[-1].record(out, inputs, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _binary_operands(a, b):
    if not isinstance(a, Tensor) and isinstance(b, Tensor):
        a = as_tensor(a, b)
    elif not isinstance(b, Tensor) and isinstance(a, Tensor):
        b = as_tensor(b, a)
    else:
        a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatchError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


# ------------------------------------------------------- elementwise ops

def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _finish(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _finish(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return _finish(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul",
    )


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _finish(out, (a, b), vjp, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _finish(-a.data, (a,), lambda g: (-g,), "neg")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0  # subgradient at 0 is 0
    return _finish(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _finish(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _finish(out, (a,), lambda g: (g / a.data,), "log")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _finish(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _finish(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _finish(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    """log(1 + exp(a)), computed without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return _finish(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


# ------------------------------------------------------- reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _finish(np.asarray(out), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    if any(a.shape[i] == 0 for i in axes):
        raise ShapeMismatchError("mean over an empty axis")
    count = int(np.prod([a.shape[i] for i in axes]))
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).astype(a.dtype),)

    return _finish(np.asarray(out), (a,), vjp, "mean")


def max(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    if a.data.size == 0:
        raise ShapeMismatchError("max over an empty tensor")
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(np.argmax(flat))
        out = flat[idx]
        if keepdims:
            out = np.reshape(out, (1,) * a.ndim)

        def vjp(g):
            z = np.zeros(flat.shape, dtype=a.dtype)
            z[idx] = np.reshape(g, ())
            return (z.reshape(a.shape),)

        return _finish(np.asarray(out), (a,), vjp, "max")

    ax = axis % a.ndim
    if a.shape[ax] == 0:
        raise ShapeMismatchError("max over an empty axis")
    idx = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    out = np.take_along_axis(a.data, idx, axis=ax)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        z = np.zeros(a.shape, dtype=a.dtype)
        np.put_along_axis(z, idx, g, axis=ax)
        return (z,)

    return _finish(out if keepdims else np.squeeze(out, ax), (a,), vjp, "max")


def logsumexp(a, axis: int = -1, weights=None, keepdims: bool = False) -> Tensor:
    """log(sum_k w_k exp(a_k)) along ``axis`` with max subtraction.

    ``weights`` is an optional non-negative constant array broadcastable to
    ``a``; zero-weight entries are excluded from the sum entirely.
    """
    a = as_tensor(a)
    x = a.data
    ax = axis % x.ndim
    if weights is None:
        w = None
        m = x.max(axis=ax, keepdims=True)
    else:
        w = np.broadcast_to(np.asarray(weights, dtype=x.dtype), x.shape)
        if np.any(w < 0):
            raise ValidationError("logsumexp weights must be non-negative")
        m = np.where(w > 0, x, -np.inf).max(axis=ax, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    if w is not None:
        e = e * w
    s = e.sum(axis=ax, keepdims=True)
    with np.errstate(divide="ignore"):
        out_k = m + np.log(s)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (g * e / s,)

    out = out_k if keepdims else np.squeeze(out_k, ax)
    return _finish(out.astype(x.dtype, copy=False), (a,), vjp, "logsumexp")


# ------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b, a if isinstance(a, Tensor) else None)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _finish(out, (a, b), vjp, "matmul")


# ------------------------------------------------------- shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from exc
    return _finish(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _finish(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeMismatchError("concat of nothing")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _finish(out, tuple(ts), lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concat(expanded, axis=axis)


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    basic = _is_basic_index(idx)

    def vjp(g):
        z = np.zeros(a.shape, dtype=a.dtype)
        if basic:
            z[idx] += g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return _finish(np.array(out, copy=True), (a,), vjp, "slice")


def take_rows(table, ids) -> Tensor:
    """Row gather ``table[ids]`` for an integer array of any shape."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatchError(f"row index out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def vjp(g):
        z = np.zeros(table.shape, dtype=table.dtype)
        np.add.at(z, ids.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (z,)

    return _finish(out, (table,), vjp, "take_rows")


def l2_normalize(a, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = as_tensor(a)
    x = a.data
    n = np.sqrt((x * x).sum(axis=axis, keepdims=True))
    n = np.maximum(n, eps)
    y = x / n

    def vjp(g):
        return ((g - y * (g * y).sum(axis=axis, keepdims=True)) / n,)

    return _finish(y, (a,), vjp, "l2_normalize")


# ------------------------------------------------------- network ops

def conv3d(x, w, b=None, stride=(1, 1, 1), padding=((0, 0), (0, 0), (0, 0))) -> Tensor:
    """Cross-correlation of x [N,T,H,W,Ci] with w [Kt,Kh,Kw,Ci,Co].

    ``padding`` gives (before, after) zero padding for the T, H, W axes.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeMismatchError(f"conv3d expects rank-5 input/filter, got {x.shape}, {w.shape}")
    if x.shape[4] != w.shape[3]:
        raise ShapeMismatchError(f"conv3d channels: input {x.shape[4]} vs filter {w.shape[3]}")
    ksize = w.shape[:3]
    stride = tuple(int(s) for s in stride)
    padding = tuple((int(p0), int(p1)) for p0, p1 in padding)
    xp = x.data
    if any(p0 or p1 for p0, p1 in padding):
        xp = np.pad(xp, ((0, 0), *padding, (0, 0)))
    out_size = tuple((xp.shape[i + 1] - ksize[i]) // stride[i] + 1 for i in range(3))
    if any(o <= 0 for o in out_size):
        raise ShapeMismatchError(f"conv3d: input {x.shape} too small for filter {w.shape}")
    cols = _kernels.im2col(xp, ksize, stride, out_size)
    kdim = int(np.prod(ksize)) * x.shape[4]
    co = w.shape[4]
    cols2 = cols.reshape(-1, kdim)
    wm = w.data.reshape(kdim, co)
    out = (cols2 @ wm).reshape(x.shape[0], *out_size, co)
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b, w)
        if b.shape != (co,):
            raise ShapeMismatchError(f"conv3d bias shape {b.shape} != ({co},)")
        out = out + b.data
        inputs = (x, w, b)

    def vjp(g):
        g2 = g.reshape(-1, co)
        gw = (cols2.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm.T).reshape(cols.shape)
            dxp = _kernels.col2im(dcols, xp.shape, stride)
            (t0, t1), (h0, h1), (w0, w1) = padding
            gx = dxp[:, t0 : xp.shape[1] - t1, h0 : xp.shape[2] - h1, w0 : xp.shape[3] - w1]
            gx = np.ascontiguousarray(gx)
        if b is None:
            return gx, gw
        return gx, gw, _channel_sum(g2)

    return _finish(out, inputs, vjp, "conv3d")


def _channel_sum(a: np.ndarray) -> np.ndarray:
    """Sum over every axis but the last, as a BLAS matrix-vector product
    (an order of magnitude faster than ``sum(axis=...)`` for few channels)."""
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0], dtype=a.dtype) @ a2


def batch_norm(x, gamma, beta, moving_mean: np.ndarray, moving_var: np.ndarray,
               training: bool, decay: float = 0.9, eps: float = 1e-5,
               update_stats: bool = True) -> Tensor:
    """Per-channel normalization over every axis except the last.

    In training mode batch statistics are used and, if ``update_stats``, the
    moving buffers are updated in place: m <- decay*m + (1-decay)*batch.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(f"batch_norm: channel dim {c} vs gamma {gamma.shape}")
    axes = tuple(range(x.ndim - 1))
    if training:
        m = int(np.prod([x.shape[i] for i in axes]))
        if m == 0:
            raise ShapeMismatchError("batch_norm: empty batch in train mode")
        mu = _channel_sum(x.data) / m
        centred = x.data - mu
        var = _channel_sum(centred * centred) / m
        if update_stats:
            moving_mean *= decay
            moving_mean += (1.0 - decay) * mu
            moving_var *= decay
            moving_var += (1.0 - decay) * var
    else:
        mu = np.asarray(moving_mean, dtype=x.dtype)
        var = np.asarray(moving_var, dtype=x.dtype)
        centred = x.data - mu
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centred * inv_std
    out = gamma.data * xhat + beta.data

    def vjp(g):
        g_xhat = _channel_sum(g * xhat)
        g_sum = _channel_sum(g)
        gg = g_xhat if gamma.requires_grad else None
        gb = g_sum if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            if training:
                # sums of dxhat and dxhat*xhat are gamma times the sums above
                gx = inv_std / m * (m * dxhat - gamma.data * g_sum - xhat * (gamma.data * g_xhat))
            else:
                gx = dxhat * inv_std
        return gx, gg, gb

    return _finish(out, (x, gamma, beta), vjp, "batch_norm")


def temporal_shift(x, fold: int) -> Tensor:
    """Shift channels [0, fold) forward one step in time and [fold, 2*fold)
    backward one step, zero-filling at the clip ends. x is [N,T,...,C]."""
    x = as_tensor(x)
    if x.shape[1] == 0:
        raise ShapeMismatchError("temporal_shift on T = 0")
    if fold == 0:
        return _finish(x.data.copy(), (x,), lambda g: (g,), "temporal_shift")
    out = _shift(x.data, fold, +1)
    return _finish(out, (x,), lambda g: (_shift(g, fold, -1),), "temporal_shift")


def _shift(a, fold, direction):
    out = a.copy()
    fwd = slice(0, fold) if direction > 0 else slice(fold, 2 * fold)
    bwd = slice(fold, 2 * fold) if direction > 0 else slice(0, fold)
    out[:, :, ..., fwd] = 0
    out[:, 1:, ..., fwd] = a[:, :-1, ..., fwd]
    out[:, :, ..., bwd] = 0
    out[:, :-1, ..., bwd] = a[:, 1:, ..., bwd]
    return out


# ------------------------------------------------------- registry

OPS: dict[str, Callable] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "relu": relu,
    "exp": exp,
    "log": log,
    "abs": absolute,
    "square": square,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "sum": sum,
    "mean": mean,
    "max": max,
    "logsumexp": logsumexp,
    "reshape": reshape,
    "transpose": transpose,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "slice": getitem,
    "take_rows": take_rows,
    "l2_normalize": l2_normalize,
    "conv3d": conv3d,
    "batch_norm": batch_norm,
    "temporal_shift": temporal_shift,
}


def forward_op(name: str, inputs: Sequence, attrs: dict | None = None) -> Tensor:
    """Run a registered op by name, e.g. ``forward_op("relu", [x])``."""
    try:
        fn = OPS[name]
    except KeyError:
        raise UnknownOpError(f"unknown op {name!r}") from None
    return fn(*inputs, **(attrs or {}))


# ------------------------------------------------------- gradient checking

def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = None, seed: int = 0, floor: float = 1e-8) -> float:
    """Max relative error between tape gradients and central differences.

    The error per coordinate is |a - c| / max(|a|, |c|, floor). With
    ``max_coords`` only that many randomly chosen coordinates per input are
    probed (for large inputs).
    """
    if eps <= 0:
        raise ValidationError("eps must be positive")
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != np.float64:
            raise ValidationError("grad_check requires float64 inputs")
    leaves = [Tensor(t.data.copy(), requires_grad=True) for t in inputs]
    with GradientTape() as tape:
        out = f(*leaves)
    if not out.requires_grad:
        analytic = [np.zeros_like(t.data) for t in leaves]
    else:
        analytic = tape.gradient(out, leaves)
    worst = 0.0
    pick = np.random.default_rng(seed)
    with no_record():
        for leaf, ana in zip(leaves, analytic):
            flat = leaf.data.reshape(-1)
            aflat = ana.reshape(-1)
            coords = range(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(pick.choice(flat.size, max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f(*leaves).data)
                flat[i] = orig - eps
                fm = float(f(*leaves).data)
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                if not (np.isfinite(num) and np.isfinite(aflat[i])):
                    raise NonFiniteError("grad_check met a non-finite value")
                den = np.max([abs(aflat[i]), abs(num), floor])
                worst = np.max([worst, abs(aflat[i] - num) / den])
    return float(worst)
