"""Optimisation loop, Adam, learning-rate schedule and checkpoint files."""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SampleSource, augment, make_batch
from .errors import (ConfigError, CorruptFileError, ShapeMismatchError, ValidationError,
                     VersionMismatchError)
from .losses import combined_loss
from .model import MMVModel
from .nn import ParamStore


@dataclass
class Schedule:
    base_lr: float = 0.002
    warmup_steps: int = 100
    total_steps: int = 2000

    def __post_init__(self):
        if self.base_lr < 0:
            raise ValidationError("base_lr must be >= 0")
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ValidationError("need 0 <= warmup_steps <= total_steps and total_steps >= 1")


def lr_at(step: int, s: Schedule) -> float:
    """Linear warmup to base_lr, then a half-period cosine down to 0 at total_steps."""
    if not 0 <= step <= s.total_steps:
        raise ValidationError(f"step {step} outside [0, {s.total_steps}]")
    if step < s.warmup_steps:
        return s.base_lr * step / s.warmup_steps
    span = s.total_steps - s.warmup_steps
    if span == 0:
        return s.base_lr
    return float(s.base_lr * 0.5 * (1.0 + np.cos(np.pi * (step - s.warmup_steps) / span)))


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: dict, **kw) -> "OptimizerState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: OptimizerState, lr: float) -> None:
    """Bias-corrected Adam, applied in place to ``params`` (name -> Tensor)."""
    for k, p in params.items():
        if k not in grads or grads[k].shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatchError(f"gradient/moment shape mismatch for {k!r}")
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        m = state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)


# ------------------------------------------------------------------ checkpoints

CKPT_MAGIC = b"MMVC"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i4"), 3: np.dtype("<i8"),
           4: np.dtype("u1")}
_TAGS = {np.dtype(v).newbyteorder("="): k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    tensors: dict  # name -> ndarray
    config: dict  # JSON-serialisable: run config, step, rng description
    version: int = CKPT_VERSION


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = bytearray(CKPT_MAGIC)
    blob = json.dumps(ckpt.config, sort_keys=True).encode()
    out += struct.pack("<II", ckpt.version, len(blob)) + blob
    out += struct.pack("<I", len(ckpt.tensors))
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name])
        tag = _TAGS.get(arr.dtype.newbyteorder("="))
        if tag is None:
            raise ValidationError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        raw = name.encode()
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += struct.pack("<B", tag)
        out += np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def from_bytes(raw: bytes, where: str = "<bytes>") -> Checkpoint:
    if len(raw) < 16 or raw[:4] != CKPT_MAGIC:
        raise CorruptFileError(f"{where}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CKPT_VERSION:
        raise VersionMismatchError(f"{where}: checkpoint version {version}, expected {CKPT_VERSION}")
    body = raw[:-4]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", raw[-4:])[0]:
        raise CorruptFileError(f"{where}: checksum mismatch")
    try:
        (blen,) = struct.unpack_from("<I", body, 8)
        off = 12
        config = json.loads(body[off: off + blen])
        off += blen
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off: off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}Q", body, off)
            off += 8 * rank
            (tag,) = struct.unpack_from("<B", body, off)
            off += 1
            dt = _DTYPES[tag]
            size = int(np.prod(shape, dtype=np.int64))
            if off + size * dt.itemsize > len(body):
                raise CorruptFileError(f"{where}: truncated tensor {name!r}")
            arr = np.frombuffer(body, dt, size, off).reshape(shape)
            tensors[name] = arr.astype(dt.newbyteorder("="))
            off += size * dt.itemsize
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{where}: malformed checkpoint") from exc
    if off != len(body):
        raise CorruptFileError(f"{where}: trailing bytes")
    return Checkpoint(tensors, config, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    data = to_bytes(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), str(path))


def pack_state(store: ParamStore, opt: OptimizerState | None) -> dict:
    tensors = {f"param/{k}": p.data for k, p in store.params.items()}
    tensors.update({f"buffer/{k}": b for k, b in store.buffers.items()})
    if opt is not None:
        tensors.update({f"adam.m/{k}": a for k, a in opt.m.items()})
        tensors.update({f"adam.v/{k}": a for k, a in opt.v.items()})
        tensors["adam.step"] = np.array(opt.step, dtype=np.int64)
    return tensors


def unpack_state(tensors: dict) -> tuple[ParamStore, OptimizerState | None]:
    store = ParamStore()
    m, v = {}, {}
    for name, arr in tensors.items():
        kind, _, key = name.partition("/")
        if kind == "param":
            store.add_param(key, arr.copy())
        elif kind == "buffer":
            store.buffers[key] = arr.copy()
        elif kind == "adam.m":
            m[key] = arr.copy()
        elif kind == "adam.v":
            v[key] = arr.copy()
    opt = None
    if "adam.step" in tensors:
        opt = OptimizerState(m, v, int(tensors["adam.step"]))
    return store, opt


# ------------------------------------------------------------------ loop

METRIC_FIELDS = ("step", "lr", "loss_total", "loss_va", "loss_vt")


@dataclass
class TrainResult:
    model: MMVModel
    opt: OptimizerState
    metrics: list = field(default_factory=list)  # rows of METRIC_FIELDS
    checkpoint: Checkpoint | None = None


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    return buf.getvalue()


def smoothed(values, window: int = 50) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    w = min(window, len(v))
    return np.convolve(v, np.ones(w) / w, mode="valid")


def build_model(cfg) -> MMVModel:
    check_config(cfg)
    return MMVModel.create(cfg.encoder, cfg.graph, seed=cfg.seed, sample_rate=cfg.world.sample_rate)


def check_config(cfg) -> None:
    """Cross-section consistency checks that no single section can see."""
    if cfg.encoder.vocab_size < cfg.world.vocab_size:
        raise ConfigError(
            f"encoder.vocab_size {cfg.encoder.vocab_size} < world.vocab_size {cfg.world.vocab_size}"
        )
    crop = cfg.augment.crop_size
    if crop is not None and crop > min(cfg.world.height, cfg.world.width):
        raise ConfigError(f"augment.crop_size {crop} exceeds the frame size")
    if cfg.train.batch_size < 2:
        raise ConfigError("train.batch_size must be >= 2")
    if cfg.schedule.total_steps < 1:
        raise ConfigError("schedule.total_steps must be >= 1")


def active_pairs(loss_cfg) -> tuple:
    return tuple(p for p, lam in (("va", loss_cfg.lambda_va), ("vt", loss_cfg.lambda_vt)) if lam > 0)


def train(cfg, out_dir=None, source: SampleSource | None = None, log=None,
          resume: Checkpoint | None = None) -> TrainResult:
    """Run the loop described by ``cfg`` (a RunConfig).

    Each step draws its own RNG from (seed, step), so a run is reproducible
    and can resume from any checkpoint.
    """
    model = build_model(cfg)
    opt = OptimizerState.create(model.store.params)
    start = 0
    if resume is not None:
        store, opt = unpack_state(resume.tensors)
        model = model.with_store(store)
        start = int(resume.config["step"])
    world, tc = cfg.world, cfg.train
    if source is None:
        source = SampleSource(world, tc.data_seed, tc.pool_size)
    pairs = active_pairs(cfg.loss)
    rows = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    for step in range(start, cfg.schedule.total_steps):
        rng = np.random.default_rng([cfg.seed, step])
        if len(source):
            idx = rng.integers(0, len(source), tc.batch_size)
        else:
            idx = step * tc.batch_size + np.arange(tc.batch_size)
        samples = [augment(source[int(i)], cfg.augment, rng, world) for i in idx]
        with T.GradientTape() as tape:
            batch = make_batch(samples, model, "train", pairs, world.sample_rate)
            loss, parts = combined_loss(batch, cfg.loss)
        grads = tape.gradient(loss, model.store.params)
        lr = lr_at(step, cfg.schedule)
        adam_step(model.store.params, grads, opt, lr)
        rows.append((step, lr, loss.item(), parts["va"].item(), parts["vt"].item()))
        if log is not None:
            log(rows[-1])
        done = step + 1
        if out_dir is not None and tc.checkpoint_every and done % tc.checkpoint_every == 0 \
                and done < cfg.schedule.total_steps:
            save_checkpoint(make_checkpoint(cfg, model, opt, done), os.path.join(out_dir, f"ckpt_{done:06d}.mmvc"))
    ckpt = make_checkpoint(cfg, model, opt, cfg.schedule.total_steps)
    if out_dir is not None:
        save_checkpoint(ckpt, os.path.join(out_dir, "final.mmvc"))
        mode = "a" if resume is not None else "w"
        text = metrics_csv(rows)
        if resume is not None:
            text = text.split("\n", 1)[1]
        with open(os.path.join(out_dir, "metrics.csv"), mode) as fh:
            fh.write(text)
    return TrainResult(model, opt, rows, ckpt)


def make_checkpoint(cfg, model: MMVModel, opt: OptimizerState | None, step: int) -> Checkpoint:
    meta = {
        "run_config": cfg.to_dict(),
        "step": step,
        # every step's generator is default_rng([seed, step]); this is the whole RNG state
        "rng": {"scheme": "per-step", "seed": cfg.seed, "next_step": step},
    }
    return Checkpoint(pack_state(model.store, opt), meta)


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild (RunConfig, MMVModel) from a checkpoint."""
    from .config import RunConfig

    cfg = RunConfig.from_dict(ckpt.config["run_config"])
    store, _ = unpack_state(ckpt.tensors)
    model = MMVModel(cfg.encoder, cfg.graph, cfg.world.sample_rate, store)
    return cfg, model
