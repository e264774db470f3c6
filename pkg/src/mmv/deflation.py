"""Turning a trained video backbone into an image backbone.

conv3d nets: each 3D filter collapses to a 2D one by summing over time.
shift nets: the same residual weights run on one frame with the shift off.
Either way only BN gamma/beta are re-fit afterwards, by L1 regression onto
the video net's output on static videos (an image repeated T times).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .encoders import EncoderConfig, residual_block
from .errors import DataError, ShapeMismatchError, ValidationError
from .nn import Conv3dFilter, ParamStore, ShiftConfig
from .tensor import Tensor

METHODS = ("naive", "recalibrated")
TARGETS = ("backbone", "head")


@dataclass
class DeflationJob:
    method: str = "recalibrated"
    static_length: int | None = None  # None: the training clip length
    epochs: int = 100
    lr: float = 1e-2
    decay_every: int = 30
    decay: float = 0.1
    batch_size: int = 32
    holdout_fraction: float = 0.25
    calibration_images: int = 512
    data_seed: int = 2_000_003  # calibration stream, disjoint from the eval streams
    seed: int = 0
    target: str = "backbone"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if self.target not in TARGETS:
            raise ValidationError(f"target must be one of {TARGETS}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValidationError("holdout_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs >= 0 and batch_size >= 1 required")


@dataclass
class Conv2dFilter:
    weights: np.ndarray  # [Kh, Kw, Cin, Cout]
    bias: np.ndarray | None
    stride: int = 1


def deflate_filters(f: Conv3dFilter) -> Conv2dFilter:
    """w'[h,w,i,o] = sum_t w[t,h,w,i,o]; bias kept; spatial stride kept."""
    w = f.weights.data if isinstance(f.weights, Tensor) else np.asarray(f.weights)
    b = None if f.bias is None else (f.bias.data if isinstance(f.bias, Tensor) else f.bias).copy()
    if f.strides[1] != f.strides[2]:
        raise ShapeMismatchError("deflation expects equal spatial strides")
    return Conv2dFilter(w.sum(axis=0), b, f.strides[1])


def deflate_shift(cfg: EncoderConfig) -> ShiftConfig:
    """Shift settings for the image net: same fraction, shift disabled."""
    return ShiftConfig(cfg.shift_fraction, enabled=False)


def static_video(images: np.ndarray, length: int) -> np.ndarray:
    """[N,H,W,3] -> [N,length,H,W,3] by repeating each image."""
    if images.ndim != 4:
        raise ShapeMismatchError(f"images must be [N,H,W,3], got {images.shape}")
    return np.repeat(images[:, None], length, axis=1)


class DeflatedEncoder:
    """Image backbone [N,H,W,3] -> [N,d_v] derived from a video backbone."""

    prefix = "video"

    def __init__(self, cfg: EncoderConfig, source: ParamStore):
        self.cfg = cfg
        self.widths = (*cfg.video_widths, cfg.d_v)
        self.store = ParamStore()
        for k, b in source.buffers.items():
            if k.startswith(self.prefix + "."):
                self.store.buffers[k] = b.copy()
        if cfg.video_arch == "conv3d-mini":
            for i in range(len(self.widths)):
                p = f"{self.prefix}.block{i}"
                w = source.params[f"{p}.conv.w"]
                bias = source.params.get(f"{p}.conv.b")
                f2 = deflate_filters(Conv3dFilter(w, bias, cfg.temporal_padding, "zero", (1, 2, 2)))
                self.store.add_param(f"{p}.conv2d.w", f2.weights)
                if f2.bias is not None:
                    self.store.add_param(f"{p}.conv2d.b", f2.bias)
                if cfg.video_bn:
                    for s in ("gamma", "beta"):
                        self.store.add_param(f"{p}.bn.{s}", source.params[f"{p}.bn.{s}"].data.copy())
        else:
            for k, t in source.params.items():
                if k.startswith(self.prefix + "."):
                    self.store.add_param(k, t.data.copy())
        self.shift = deflate_shift(cfg)

    def bn_param_names(self) -> list:
        return sorted(k for k in self.store.params if k.endswith((".gamma", ".beta")))

    def __call__(self, images, mode: str = "eval") -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=np.float32))
        if x.ndim != 4 or x.shape[-1] != 3:
            raise ShapeMismatchError(f"images must be [N,H,W,3], got {x.shape}")
        s = self.store
        if self.cfg.video_arch == "conv3d-mini":
            for i in range(len(self.widths)):
                p = f"{self.prefix}.block{i}"
                x = nn.conv2d(x, s.params[f"{p}.conv2d.w"], s.params.get(f"{p}.conv2d.b"), stride=2)
                if self.cfg.video_bn:
                    x = nn.batch_norm(x, s.bn(f"{p}.bn", mode))
                x = T.relu(x)
            return nn.pool(x, "spatial-avg")
        n = x.shape[0]
        x = T.reshape(x, (n, 1, *x.shape[1:]))
        for i in range(len(self.widths)):
            x = residual_block(s, f"{self.prefix}.block{i}", x, mode, self.shift, n, 1)
        return nn.pool(x, "spatiotemporal-avg")

    def features(self, images: np.ndarray, chunk: int = 128) -> np.ndarray:
        outs = []
        with T.no_record():
            for i in range(0, len(images), chunk):
                outs.append(self(images[i: i + chunk]).data)
        return np.concatenate(outs)


@dataclass
class DeflationReport:
    encoder: DeflatedEncoder
    naive_gap: float
    final_gap: float
    history: list = field(default_factory=list)  # per-epoch mean training L1


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def recalibrate(model, images: np.ndarray, job: DeflationJob, static_length: int) -> DeflationReport:
    """Deflate ``model``'s video backbone and, for method ``recalibrated``, fit
    BN gamma/beta (eval-mode BN, every other weight frozen) with Adam on the
    L1 distance to the source net's static-video outputs.

    The returned gaps are mean absolute differences on a held-out split.
    """
    images = np.asarray(images, dtype=np.float32)
    if len(images) < 2:
        raise DataError("recalibration needs at least two calibration images")
    rng = np.random.default_rng(job.seed)
    order = rng.permutation(len(images))
    n_hold = max(1, int(round(job.holdout_fraction * len(images))))
    hold, fit = order[:n_hold], order[n_hold:]
    if job.method == "recalibrated" and len(fit) == 0:
        raise DataError("no calibration images left after the held-out split")

    head = _head_fn(model) if job.target == "head" else None
    targets = np.concatenate([
        model.video_features(static_video(images[i: i + 64], static_length))
        for i in range(0, len(images), 64)
    ])
    if head is not None:
        targets = head(Tensor(targets)).data
    deflated = DeflatedEncoder(model.enc_cfg, model.store)

    def outputs(idx):
        f = deflated.features(images[idx])
        return head(Tensor(f)).data if head is not None else f

    naive = _l1(outputs(hold), targets[hold])
    if job.method == "naive" or not deflated.bn_param_names():
        return DeflationReport(deflated, naive, naive)

    from .train import OptimizerState, adam_step

    params = {k: deflated.store.params[k] for k in deflated.bn_param_names()}
    opt = OptimizerState.create(params)
    history = []
    # keep the best gamma/beta by full fit-split L1 (the start point included);
    # the held-out split never takes part in the choice
    best = (_l1(outputs(fit), targets[fit]), {k: p.data.copy() for k, p in params.items()})
    for epoch in range(job.epochs):
        lr = job.lr * job.decay ** (epoch // job.decay_every)
        perm = rng.permutation(fit)
        total = 0.0
        for i in range(0, len(perm), job.batch_size):
            idx = perm[i: i + job.batch_size]
            with T.GradientTape() as tape:
                out = deflated(images[idx], "eval")
                if head is not None:
                    out = head(out)
                loss = T.mean(T.absolute(T.sub(out, targets[idx])))
            adam_step(params, tape.gradient(loss, params), opt, lr)
            total += loss.item() * len(idx)
        history.append(total / len(perm))
        fit_gap = _l1(outputs(fit), targets[fit])
        if fit_gap < best[0]:
            best = (fit_gap, {k: p.data.copy() for k, p in params.items()})
    for k, p in params.items():
        p.data = best[1][k]
    return DeflationReport(deflated, naive, _l1(outputs(hold), targets[hold]), history)


def _head_fn(model):
    space = model.graph.cfg.loss_space("va")
    return lambda rep: model.graph.project(model.store, rep, "v", space, "eval")


def calibration_images(world, n: int, seed: int, crop: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Single centre-cropped frames from a fresh sample stream, with labels."""
    from .data import center_crop, generate_sample

    imgs, labels = [], []
    for i in range(n):
        s = generate_sample(world, seed, i)
        t = (s.video.shape[0] - 1) // 2
        imgs.append(center_crop(s.video[t: t + 1], crop)[0])
        labels.append(s.label)
    return np.stack(imgs), np.array(labels)
