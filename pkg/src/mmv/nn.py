"""Layer primitives: 3D/2D convolution, batch norm, temporal shift, pooling, linear."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeMismatchError, ValidationError
from .tensor import Tensor

PADDING_MODES = ("zero", "valid")
POOL_KINDS = ("spatial-avg", "temporal-avg", "spatiotemporal-avg", "max-over-axis")


@dataclass
class Conv3dFilter:
    weights: Tensor  # [Kt, Kh, Kw, Cin, Cout]
    bias: Tensor | None = None
    temporal_padding: str = "zero"
    spatial_padding: str = "zero"
    strides: tuple = (1, 1, 1)

    def __post_init__(self):
        if self.weights.ndim != 5:
            raise ShapeMismatchError(f"filter must be rank 5, got {self.weights.shape}")
        if self.weights.shape[0] < 1:
            raise ShapeMismatchError("K_t must be >= 1")
        for mode in (self.temporal_padding, self.spatial_padding):
            if mode not in PADDING_MODES:
                raise ValidationError(f"padding mode must be one of {PADDING_MODES}, got {mode!r}")

    def padding(self) -> tuple:
        kt, kh, kw = self.weights.shape[:3]
        return (
            _same(kt) if self.temporal_padding == "zero" else (0, 0),
            _same(kh) if self.spatial_padding == "zero" else (0, 0),
            _same(kw) if self.spatial_padding == "zero" else (0, 0),
        )


def _same(k: int) -> tuple:
    return ((k - 1) // 2, k // 2)


def conv3d(x: Tensor, f: Conv3dFilter) -> Tensor:
    """x [N,T,H,W,Cin] -> [N,T',H',W',Cout]."""
    return T.conv3d(x, f.weights, f.bias, stride=f.strides, padding=f.padding())


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           padding: str = "zero") -> Tensor:
    """x [N,H,W,Cin], w [Kh,Kw,Cin,Cout]; runs as a K_t=1 conv3d."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects rank-4 input/filter, got {x.shape}, {w.shape}")
    n, h, wd, c = x.shape
    f = Conv3dFilter(T.reshape(w, (1, *w.shape)), b, "valid", padding, (1, stride, stride))
    y = conv3d(T.reshape(x, (n, 1, h, wd, c)), f)
    return T.reshape(y, (n, *y.shape[2:]))


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    moving_mean: np.ndarray
    moving_var: np.ndarray
    decay: float = 0.9
    epsilon: float = 1e-5
    mode: str = "train"


def batch_norm(x: Tensor, p: BatchNormParams, mode: str | None = None,
               update_stats: bool = True) -> Tensor:
    mode = mode or p.mode
    if mode not in ("train", "eval"):
        raise ValidationError(f"batch_norm mode must be train/eval, got {mode!r}")
    return T.batch_norm(x, p.gamma, p.beta, p.moving_mean, p.moving_var,
                        training=(mode == "train"), decay=p.decay, eps=p.epsilon,
                        update_stats=update_stats)


@dataclass
class ShiftConfig:
    shift_fraction: float = 0.125
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.shift_fraction <= 0.5:
            raise ValidationError("shift_fraction must lie in [0, 0.5]")

    def fold(self, channels: int) -> int:
        return int(np.floor(self.shift_fraction * channels)) if self.enabled else 0


def temporal_shift(x: Tensor, cfg: ShiftConfig) -> Tensor:
    """Channel shift along time on [N,T,H,W,C]. Disabled -> the same tensor."""
    if x.shape[1] == 0:
        raise ShapeMismatchError("temporal_shift on T = 0")
    if not cfg.enabled:
        return x
    return T.temporal_shift(x, cfg.fold(x.shape[-1]))


def pool(x: Tensor, kind: str, axis: int | None = None) -> Tensor:
    """Reductions over named axes of a [N,T,H,W,C] (or [N,L,C] for max) tensor.

    ``max-over-axis`` needs ``axis``; the averaging kinds infer their axes
    from the video layout.
    """
    if kind == "spatial-avg":
        axes = (-3, -2)
    elif kind == "temporal-avg":
        axes = (1,)
    elif kind == "spatiotemporal-avg":
        axes = (1, 2, 3)
    elif kind == "max-over-axis":
        if axis is None:
            raise ValidationError("max-over-axis needs an axis")
        if x.shape[axis] == 0:
            raise ShapeMismatchError("pool over an empty axis")
        return T.max(x, axis=axis)
    else:
        raise ValidationError(f"unknown pool kind {kind!r}")
    for a in axes:
        if x.shape[a] == 0:
            raise ShapeMismatchError("pool over an empty axis")
    return T.mean(x, axis=axes)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y if b is None else T.add(y, b)


# ------------------------------------------------------- initialisers

def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int,
                   dtype=np.float32) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


@dataclass
class ParamStore:
    """Named trainable tensors plus non-trainable buffers (BN statistics)."""

    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValidationError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_bn(self, prefix: str, channels: int, dtype=np.float32) -> None:
        self.add_param(f"{prefix}.gamma", np.ones(channels, dtype))
        self.add_param(f"{prefix}.beta", np.zeros(channels, dtype))
        self.buffers[f"{prefix}.moving_mean"] = np.zeros(channels, dtype)
        self.buffers[f"{prefix}.moving_var"] = np.ones(channels, dtype)

    def bn(self, prefix: str, mode: str) -> BatchNormParams:
        return BatchNormParams(
            self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"],
            self.buffers[f"{prefix}.moving_mean"], self.buffers[f"{prefix}.moving_var"],
            mode=mode,
        )

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for k, p in self.params.items():
            out.params[k] = Tensor(p.data.astype(dtype), requires_grad=p.requires_grad, name=k)
        for k, b in self.buffers.items():
            out.buffers[k] = b.astype(dtype)
        return out

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, p in self.params.items():
            out.params[k] = Tensor(p.data.copy(), requires_grad=p.requires_grad, name=k)
        for k, b in self.buffers.items():
            out.buffers[k] = b.copy()
        return out
