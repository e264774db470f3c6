"""Synthetic correlated video/audio/text corpus, augmentation and batch assembly.

Every sample is a pure function of ``(WorldSpec, seed, index)``:

* video: a class-specific shape moving in one of ``num_variants`` directions
  over a noisy background;
* audio: the class's harmonic tone with a slow amplitude envelope plus noise;
* text: ``k`` temporally close narration candidates. With probability
  ``1 - p_mis`` one of them is the aligned narration (class words plus a
  direction word); otherwise all are distractors. With probability
  ``missing_text`` the sample has no text at all.

Samples hold the full *source* streams (``source_frames`` frames and the
matching audio span). :func:`augment` cuts the training clip out of them.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels as K
from . import tensor as T
from .encoders import PAD_ID, TEXT_LEN
from .errors import CorruptFileError, DataError, ValidationError, VersionMismatchError
from .losses import Batch

N_SHAPES = 8


@dataclass
class WorldSpec:
    num_classes: int = 8
    clip_frames: int = 8
    source_frames: int = 12
    height: int = 32
    width: int = 32
    fps: float = 8.0
    shape_radius: tuple = (4.5, 7.0)
    speed: float = 1.0
    video_noise: float = 0.05
    hue_jitter: float = 0.03  # per-instance spread around the class hue
    num_variants: int = 4
    sample_rate: int = 8000
    f0_range: tuple = (200.0, 1200.0)
    harmonics: int = 3
    snr_db: float = 10.0
    vocab_size: int = 64
    words_per_class: int = 4
    candidates: int = 3
    p_mis: float = 0.25
    missing_text: float = 0.5

    def __post_init__(self):
        self.shape_radius = tuple(float(r) for r in self.shape_radius)
        self.f0_range = tuple(float(f) for f in self.f0_range)
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        if not 0.0 <= self.p_mis <= 1.0:
            raise ValidationError("p_mis must lie in [0, 1]")
        if not 0.0 <= self.missing_text <= 1.0:
            raise ValidationError("missing_text must lie in [0, 1]")
        if self.clip_frames < 1 or self.source_frames < self.clip_frames:
            raise ValidationError("need 1 <= clip_frames <= source_frames")
        if self.candidates < 1:
            raise ValidationError("candidates (k) must be >= 1")
        if self.num_variants < 1:
            raise ValidationError("num_variants must be >= 1")
        if self.filler_start() + 4 > self.vocab_size:
            raise ValidationError(
                f"vocab_size {self.vocab_size} too small for {self.num_classes} classes"
            )
        r_max = self.shape_radius[1]
        travel = self.speed * (self.source_frames - 1)
        if 2 * r_max + travel > min(self.height, self.width):
            raise ValidationError("frame too small for the shape radius and motion range")

    # vocabulary layout: 0 pad | class words | direction words | filler words
    def class_words(self, c: int) -> np.ndarray:
        start = 1 + c * self.words_per_class
        return np.arange(start, start + self.words_per_class)

    def variant_word(self, v: int) -> int:
        return 1 + self.num_classes * self.words_per_class + v

    def filler_start(self) -> int:
        return 1 + self.num_classes * self.words_per_class + self.num_variants

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_frames / self.fps * self.sample_rate))

    @property
    def source_samples(self) -> int:
        return int(round(self.source_frames / self.fps * self.sample_rate))

    def f0(self, c: int) -> float:
        lo, hi = self.f0_range
        return lo * (hi / lo) ** (c / max(self.num_classes - 1, 1))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MultimodalSample:
    video: np.ndarray | None  # [T, H, W, 3] float32 in [0, 1]
    audio: np.ndarray | None  # [L] float32 in [-1, 1]
    text_candidates: np.ndarray  # [k, 16] int32; k = 0 when text is missing
    label: int
    variant: int
    caption: np.ndarray  # [16] aligned narration, used by evaluation only
    index: int = -1

    @property
    def has_video(self) -> bool:
        return self.video is not None

    @property
    def has_audio(self) -> bool:
        return self.audio is not None

    @property
    def has_text(self) -> bool:
        return len(self.text_candidates) > 0

    def __post_init__(self):
        if sum((self.has_video, self.has_audio, self.has_text)) < 2:
            raise ValidationError("a sample needs at least two modalities")


# ----------------------------------------------------------------- rendering

def _shape_mask(shape_id: int, dx: np.ndarray, dy: np.ndarray, r: float) -> np.ndarray:
    ax, ay = np.abs(dx), np.abs(dy)
    if shape_id == 0:  # disk
        return dx * dx + dy * dy <= r * r
    if shape_id == 1:  # square
        return np.maximum(ax, ay) <= r * 0.8
    if shape_id == 2:  # triangle, apex up
        return (dy <= r * 0.8) & (dy >= -r) & (ax <= (dy + r) * 0.55)
    if shape_id == 3:  # plus
        return ((ax <= r / 3) & (ay <= r)) | ((ay <= r / 3) & (ax <= r))
    if shape_id == 4:  # ring
        d2 = dx * dx + dy * dy
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    if shape_id == 5:  # horizontal bar
        return (ax <= r) & (ay <= r / 3)
    if shape_id == 6:  # vertical bar
        return (ay <= r) & (ax <= r / 3)
    return ax + ay <= r  # diamond


_hsv_to_rgb = K.hsv_to_rgb
_rgb_to_hsv = K.rgb_to_hsv


def _render_video(spec: WorldSpec, label: int, variant: int, rng) -> np.ndarray:
    H, W, Ts = spec.height, spec.width, spec.source_frames
    r = rng.uniform(*spec.shape_radius)
    angle = 2 * np.pi * variant / spec.num_variants
    vel = spec.speed * np.array([np.cos(angle), np.sin(angle)])
    travel = vel * (Ts - 1)
    lo = np.array([r, r]) - np.minimum(travel, 0)
    hi = np.array([W - 1 - r, H - 1 - r]) - np.maximum(travel, 0)
    start = rng.uniform(lo, hi)
    hue = label / spec.num_classes + rng.uniform(-spec.hue_jitter, spec.hue_jitter)
    fg = _hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0))
    bg = _hsv_to_rgb(rng.uniform(), rng.uniform(0.0, 0.5), rng.uniform(0.05, 0.3))
    centers = start[None] + vel[None] * np.arange(Ts)[:, None]  # [Ts, 2] (x, y)
    centers = centers.astype(np.float32)
    dx = np.arange(W, dtype=np.float32)[None, None, :] - centers[:, 0, None, None]
    dy = np.arange(H, dtype=np.float32)[None, :, None] - centers[:, 1, None, None]
    mask = _shape_mask(label % N_SHAPES, dx, dy, r)
    if (label // N_SHAPES) % 2 == 1:  # classes beyond the 8 base shapes get a striped fill
        mask = mask & (np.arange(H)[None, :, None] % 2 == 0)
    frames = np.where(mask[..., None], fg.astype(np.float32), bg.astype(np.float32))
    frames += spec.video_noise * rng.standard_normal(frames.shape, dtype=np.float32)
    return np.clip(frames, 0.0, 1.0, out=frames)


def _render_audio(spec: WorldSpec, label: int, rng) -> np.ndarray:
    sr = spec.sample_rate
    t = np.arange(spec.source_samples) / sr

    def tone(freq, phase):
        # wrap the phase in float64, take the sine in float32 (much faster)
        turns = freq * t + phase / (2 * np.pi)
        turns -= np.floor(turns)
        return np.sin((2 * np.pi) * turns.astype(np.float32))

    f0 = spec.f0(label) * rng.uniform(0.98, 1.02)
    sig = np.zeros(t.shape, dtype=np.float32)
    for h in range(1, spec.harmonics + 1):
        if h * f0 >= sr / 2:
            break
        sig += tone(h * f0, rng.uniform(0, 2 * np.pi)) / np.float32(h)
    sig *= 0.6 + 0.4 * tone(2.0, rng.uniform(0, 2 * np.pi))
    p_sig = float(np.mean(sig ** 2))
    sig += np.float32(np.sqrt(p_sig / 10 ** (spec.snr_db / 10.0))) * rng.standard_normal(sig.shape, dtype=np.float32)
    sig *= np.float32(rng.uniform(0.3, 0.9) / np.max(np.abs(sig)))
    return sig


def _narration(spec: WorldSpec, rng, label: int | None, variant: int | None) -> np.ndarray:
    filler = np.arange(spec.filler_start(), spec.vocab_size)
    if label is None:  # distractor: talk about nothing in particular
        words = list(rng.choice(filler, size=rng.integers(4, 11)))
    else:
        words = list(rng.choice(spec.class_words(label), size=rng.integers(2, 5)))
        words.append(spec.variant_word(variant))
        words += list(rng.choice(filler, size=rng.integers(3, 8)))
    words = [int(w) for w in rng.permutation(words)][:TEXT_LEN]
    return np.array(words + [PAD_ID] * (TEXT_LEN - len(words)), dtype=np.int32)


def generate_sample(spec: WorldSpec, seed: int, index: int) -> MultimodalSample:
    rng = np.random.default_rng([int(seed), int(index)])
    label = int(rng.integers(spec.num_classes))
    variant = int(rng.integers(spec.num_variants))
    video = _render_video(spec, label, variant, rng)
    audio = _render_audio(spec, label, rng)
    caption = _narration(spec, rng, label, variant)
    k = spec.candidates
    cands = [_narration(spec, rng, None, None) for _ in range(k)]
    if rng.random() >= spec.p_mis:
        cands[int(rng.integers(k))] = _narration(spec, rng, label, variant)
    text = np.stack(cands)
    if rng.random() < spec.missing_text:
        text = np.zeros((0, TEXT_LEN), dtype=np.int32)
    return MultimodalSample(video, audio, text, label, variant, caption, index)


def generate(spec: WorldSpec, seed: int, n: int, start: int = 0) -> list[MultimodalSample]:
    """Samples ``start .. start+n-1`` of the stream defined by (spec, seed)."""
    if n < 0:
        raise ValidationError("n must be non-negative")
    return [generate_sample(spec, seed, start + i) for i in range(n)]


class SampleSource:
    """Indexable training pool: either a generated stream or a loaded corpus."""

    def __init__(self, spec: WorldSpec, seed: int = 0, size: int | None = None,
                 samples: list[MultimodalSample] | None = None):
        self.spec = spec
        self.seed = seed
        self.samples = samples
        self.size = len(samples) if samples is not None else int(size or 0)  # 0: unbounded stream

    def __len__(self):
        return self.size

    def __getitem__(self, i: int) -> MultimodalSample:
        if self.samples is not None:
            return self.samples[i]
        return generate_sample(self.spec, self.seed, i)


# ----------------------------------------------------------------- augmentation

@dataclass
class AugmentConfig:
    temporal_sampling: bool = True
    scale_jitter: tuple | None = (0.8, 1.2)
    crop_size: int | None = 28
    flip_prob: float = 0.5
    brightness: float = 32.0 / 255.0
    saturation: float = 0.4
    contrast: float = 0.4
    hue: float = 0.2
    audio_noise: float = 0.01  # noise variance as a fraction of max amplitude
    temporal_jitter_sec: float = 0.0  # ablation only

    def __post_init__(self):
        if self.scale_jitter is not None:
            self.scale_jitter = tuple(float(s) for s in self.scale_jitter)
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValidationError("flip_prob must lie in [0, 1]")
        if self.temporal_jitter_sec < 0:
            raise ValidationError("temporal_jitter_sec must be >= 0")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(False, None, None, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] bilinear weights, half-pixel centers, edges clamped."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def resize(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [T,H,W,C] frames."""
    _, h, w, _ = frames.shape
    if (h, w) == (out_h, out_w):
        return frames
    mh = _interp_matrix(h, out_h).astype(frames.dtype)
    mw = _interp_matrix(w, out_w).astype(frames.dtype)
    t, _, _, c = frames.shape
    out = np.matmul(mh, frames.reshape(t, h, w * c)).reshape(t, out_h, w, c)
    out = np.matmul(mw, out.reshape(t * out_h, w, c))
    return out.reshape(t, out_h, out_w, c)


def crop(frames: np.ndarray, top: int, left: int, size: int) -> np.ndarray:
    _, h, w, _ = frames.shape
    if size > h or size > w:
        raise DataError(f"crop {size} larger than frame {h}x{w}")
    return frames[:, top: top + size, left: left + size]


def center_crop(frames: np.ndarray, size: int | None) -> np.ndarray:
    if size is None:
        return frames
    _, h, w, _ = frames.shape
    return crop(frames, (h - size) // 2, (w - size) // 2, size)


def flip(frames: np.ndarray) -> np.ndarray:
    return frames[:, :, ::-1]


def color_jitter(frames: np.ndarray, cfg: AugmentConfig, rng) -> np.ndarray:
    """Brightness, saturation, contrast, hue (one draw per clip), then clip to [0, 1]."""
    x = frames.astype(np.float32)
    if cfg.brightness > 0:
        x = x + rng.uniform(-cfg.brightness, cfg.brightness)
    if cfg.saturation > 0:
        gray = x.mean(axis=-1, keepdims=True)
        x = gray + rng.uniform(1 - cfg.saturation, 1 + cfg.saturation) * (x - gray)
    if cfg.contrast > 0:
        m = x.mean(axis=(1, 2), keepdims=True)
        x = m + rng.uniform(1 - cfg.contrast, 1 + cfg.contrast) * (x - m)
    if cfg.hue > 0:
        x = K.hue_shift(np.clip(x, 0.0, 1.0), rng.uniform(-cfg.hue, cfg.hue))
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def temporal_jitter(sample: MultimodalSample, max_offset_sec: float, rng,
                    video_start: int, spec: WorldSpec) -> np.ndarray:
    """Audio clip whose window is offset from the video clip by U[-max, max] seconds.

    The offset range is intersected with what the source audio allows, so
    the window never leaves the recording.
    """
    if sample.audio is None:
        raise DataError("temporal_jitter needs audio")
    n = spec.clip_samples
    total = len(sample.audio)
    if total < n:
        raise DataError("insufficient audio for one clip")
    base = int(round(video_start / spec.fps * spec.sample_rate))
    if max_offset_sec <= 0:
        start = base
    else:
        lo = max(-max_offset_sec, -base / spec.sample_rate)
        hi = min(max_offset_sec, (total - n - base) / spec.sample_rate)
        start = base + int(round(rng.uniform(lo, hi) * spec.sample_rate))
    start = int(np.clip(start, 0, total - n))
    return sample.audio[start: start + n]


def augment(sample: MultimodalSample, cfg: AugmentConfig, rng, spec: WorldSpec) -> MultimodalSample:
    """Training view: temporal sampling, scale jitter + resize, random crop,
    flip, color jitter, clip to [0, 1]; audio cut in sync and noised."""
    if sample.video is None:
        raise DataError("augment needs a video")
    frames = sample.video
    start = 0
    if cfg.temporal_sampling:
        start = int(rng.integers(0, frames.shape[0] - spec.clip_frames + 1))
        frames = frames[start: start + spec.clip_frames]
    _, h, w, _ = frames.shape
    if cfg.scale_jitter is not None:
        sy, sx = rng.uniform(*cfg.scale_jitter, size=2)
        jh, jw = h * sy, w * sx
        f = min(h, w) / min(jh, jw)  # resize so the short side is back to its original size
        frames = resize(frames, int(round(jh * f)), int(round(jw * f)))
    if cfg.crop_size is not None:
        _, h2, w2, _ = frames.shape
        if cfg.crop_size > min(h2, w2):
            raise DataError(f"crop {cfg.crop_size} larger than frame {h2}x{w2}")
        top = int(rng.integers(0, h2 - cfg.crop_size + 1))
        left = int(rng.integers(0, w2 - cfg.crop_size + 1))
        frames = crop(frames, top, left, cfg.crop_size)
    if cfg.flip_prob > 0 and rng.random() < cfg.flip_prob:
        frames = flip(frames)
    if max(cfg.brightness, cfg.saturation, cfg.contrast, cfg.hue) > 0:
        frames = color_jitter(frames, cfg, rng)
    frames = np.ascontiguousarray(frames, dtype=np.float32)

    audio = sample.audio
    if audio is not None:
        if cfg.temporal_sampling:
            audio = temporal_jitter(sample, cfg.temporal_jitter_sec, rng, start, spec)
        if cfg.audio_noise > 0:
            std = np.sqrt(cfg.audio_noise * np.max(np.abs(audio)))
            audio = audio + rng.normal(0.0, std, audio.shape)
        audio = audio.astype(np.float32)
    return replace(sample, video=frames, audio=audio)


def eval_view(sample: MultimodalSample, spec: WorldSpec, crop_size: int | None,
              start_frame: int = 0) -> MultimodalSample:
    """Deterministic test-time view: one clip starting at ``start_frame``, central crop."""
    frames = sample.video[start_frame: start_frame + spec.clip_frames]
    if frames.shape[0] != spec.clip_frames:
        raise DataError("sample too short for the requested clip")
    frames = np.ascontiguousarray(center_crop(frames, crop_size))
    audio = sample.audio
    if audio is not None:
        a0 = int(round(start_frame / spec.fps * spec.sample_rate))
        audio = audio[a0: a0 + spec.clip_samples]
    return replace(sample, video=frames, audio=audio)


# ----------------------------------------------------------------- batches

def make_batch(samples: list[MultimodalSample], model, mode: str = "train",
               pairs=("va", "vt"), sample_rate: float | None = None) -> Batch:
    """Embed every present modality into the spaces the model's graph uses.

    ``samples`` are clip-level views (see :func:`augment`). Samples missing
    a modality simply do not take part in the loss term needing it.
    """
    n = len(samples)
    if n < 2:
        raise ValidationError(f"make_batch needs N >= 2, got {n}")
    graph = model.graph.cfg
    has_v = np.array([s.has_video for s in samples])
    has_a = np.array([s.has_audio for s in samples])
    has_t = np.array([s.has_text for s in samples])
    va_idx = np.flatnonzero(has_v & has_a) if "va" in pairs else np.zeros(0, np.int64)
    vt_idx = np.flatnonzero(has_v & has_t) if "vt" in pairs else np.zeros(0, np.int64)
    batch = Batch(n=n, va_index=va_idx, vt_index=vt_idx)
    vid_idx = np.union1d(va_idx, vt_idx)
    if len(vid_idx) == 0:
        return batch
    spaces = []
    if len(va_idx):
        spaces.append(graph.loss_space("va"))
    if len(vt_idx) and graph.loss_space("vt") not in spaces:
        spaces.append(graph.loss_space("vt"))
    frames = np.stack([samples[i].video for i in vid_idx])
    zv = model.graph.embed(model.store, model.video(model.store, frames, mode), "v", spaces, mode)
    pos = {int(i): p for p, i in enumerate(vid_idx)}

    if len(va_idx):
        s_va = graph.loss_space("va")
        batch.zv_va = _rows(zv[s_va], [pos[int(i)] for i in va_idx], len(vid_idx))
        waves = np.stack([samples[i].audio for i in va_idx])
        sr = sample_rate if sample_rate is not None else model.sample_rate
        rep_a = model.audio(model.store, waves, sr, mode)
        batch.za_va = model.graph.project(model.store, rep_a, "a", s_va, mode)
    if len(vt_idx):
        s_vt = graph.loss_space("vt")
        batch.zv_vt = _rows(zv[s_vt], [pos[int(i)] for i in vt_idx], len(vid_idx))
        k = max(len(samples[i].text_candidates) for i in vt_idx)
        ids = np.zeros((len(vt_idx), k, TEXT_LEN), dtype=np.int32)
        mask = np.zeros((len(vt_idx), k))
        for r, i in enumerate(vt_idx):
            c = samples[i].text_candidates
            ids[r, : len(c)] = c
            mask[r, : len(c)] = 1.0
        rep_t = model.text(model.store, ids.reshape(-1, TEXT_LEN))
        zt = model.graph.project(model.store, rep_t, "t", s_vt, mode)
        batch.zt_vt = T.reshape(zt, (len(vt_idx), k, zt.shape[-1]))
        batch.zt_mask = mask
    return batch


def _rows(z, rows, total):
    if list(rows) == list(range(total)):
        return z
    return T.getitem(z, np.asarray(rows))


# ----------------------------------------------------------------- corpus file

CORPUS_MAGIC = b"MMVD"
CORPUS_VERSION = 1


def save_corpus(samples: list[MultimodalSample], spec: WorldSpec, path) -> None:
    """Little-endian container: magic, u32 version, u32 spec-json length + bytes,
    u32 sample count, per-sample records, trailing u32 CRC32."""
    out = bytearray()
    out += CORPUS_MAGIC
    blob = json.dumps(spec.to_dict(), sort_keys=True).encode()
    out += struct.pack("<II", CORPUS_VERSION, len(blob)) + blob
    out += struct.pack("<I", len(samples))
    for s in samples:
        flags = int(s.has_video) | int(s.has_audio) << 1 | int(s.has_text) << 2
        out += struct.pack("<iiiB", s.label, s.variant, s.index, flags)
        if s.has_video:
            out += struct.pack("<4I", *s.video.shape)
            out += np.ascontiguousarray(s.video, dtype="<f4").tobytes()
        if s.has_audio:
            out += struct.pack("<I", len(s.audio))
            out += np.ascontiguousarray(s.audio, dtype="<f4").tobytes()
        out += struct.pack("<I", len(s.text_candidates))
        out += np.ascontiguousarray(s.text_candidates, dtype="<i4").tobytes()
        out += np.ascontiguousarray(s.caption, dtype="<i4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(out)


def load_corpus(path) -> tuple[list[MultimodalSample], WorldSpec]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != CORPUS_MAGIC:
        raise CorruptFileError(f"{path}: not a corpus file")
    body, crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != CORPUS_VERSION:
        raise VersionMismatchError(f"{path}: corpus version {version}, expected {CORPUS_VERSION}")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptFileError(f"{path}: checksum mismatch")
    off = 8
    (blen,) = struct.unpack_from("<I", body, off)
    off += 4
    spec = WorldSpec(**json.loads(body[off: off + blen]))
    off += blen
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    samples = []
    try:
        for _ in range(count):
            label, variant, index, flags = struct.unpack_from("<iiiB", body, off)
            off += 13
            video = audio = None
            if flags & 1:
                shape = struct.unpack_from("<4I", body, off)
                off += 16
                size = int(np.prod(shape))
                video = np.frombuffer(body, "<f4", size, off).reshape(shape).astype(np.float32)
                off += 4 * size
            if flags & 2:
                (length,) = struct.unpack_from("<I", body, off)
                off += 4
                audio = np.frombuffer(body, "<f4", length, off).astype(np.float32)
                off += 4 * length
            (k,) = struct.unpack_from("<I", body, off)
            off += 4
            text = np.frombuffer(body, "<i4", k * TEXT_LEN, off).reshape(k, TEXT_LEN).astype(np.int32)
            off += 4 * k * TEXT_LEN
            caption = np.frombuffer(body, "<i4", TEXT_LEN, off).astype(np.int32)
            off += 4 * TEXT_LEN
            samples.append(MultimodalSample(video, audio, text, label, variant, caption, index))
    except (struct.error, ValueError) as exc:
        raise CorruptFileError(f"{path}: malformed sample record") from exc
    if off != len(body):
        raise CorruptFileError(f"{path}: trailing bytes")
    return samples, spec
