"""Modality backbones: miniature video nets, log-mel audio net, bag-of-words text net.

All backbones take batched inputs and read parameters from a shared
:class:`~mmv.nn.ParamStore` under a fixed name prefix (``video.``,
``audio.``, ``text.``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.fft

from . import nn
from . import tensor as T
from .errors import DataError, ShapeMismatchError, ValidationError
from .nn import Conv3dFilter, ParamStore, ShiftConfig
from .tensor import Tensor

VIDEO_ARCHS = ("conv3d-mini", "shift-mini")
TEXT_LEN = 16
PAD_ID = 0


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, H, W, 3] in [0, 1]
    fps: float = 8.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3 or self.frames.shape[0] < 1:
            raise ShapeMismatchError(f"clip must be [T>=1,H,W,3], got {self.frames.shape}")
        self.frames = np.clip(self.frames, 0.0, 1.0)


@dataclass
class AudioWave:
    samples: np.ndarray  # [L] in [-1, 1]
    sample_rate: float = 8000.0


@dataclass
class TokenSeq:
    ids: np.ndarray  # int32 [16]

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int32)
        if self.ids.shape != (TEXT_LEN,):
            raise ShapeMismatchError(f"token sequence must have length {TEXT_LEN}")

    @classmethod
    def from_words(cls, ids) -> "TokenSeq":
        ids = list(ids)[:TEXT_LEN]
        return cls(np.array(ids + [PAD_ID] * (TEXT_LEN - len(ids)), dtype=np.int32))


@dataclass
class EncoderConfig:
    video_arch: str = "conv3d-mini"
    d_v: int = 64
    d_a: int = 64
    d_t: int = 64
    video_widths: tuple = (8, 16, 32)  # blocks 1-3; block 4 outputs d_v
    temporal_kernel: int = 3
    temporal_padding: str = "zero"
    video_bn: bool = True
    shift_fraction: float = 0.125
    audio_widths: tuple = (8, 16, 32)
    vocab_size: int = 64
    word_dim: int = 32
    word_table_seed: int = 1234
    word_table_path: str | None = None
    n_mels: int = 80
    window_ms: float = 25.0
    hop_ms: float = 10.0
    fmin: float = 60.0

    def __post_init__(self):
        self.video_widths = tuple(int(w) for w in self.video_widths)
        self.audio_widths = tuple(int(w) for w in self.audio_widths)
        if self.video_arch not in VIDEO_ARCHS:
            raise ValidationError(f"video_arch must be one of {VIDEO_ARCHS}")
        if min(self.d_v, self.d_a, self.d_t) <= 0:
            raise ValidationError("d_v, d_a, d_t must be positive")
        if self.temporal_padding not in nn.PADDING_MODES:
            raise ValidationError(f"temporal_padding must be one of {nn.PADDING_MODES}")
        if self.vocab_size < 2 or self.word_dim < 1:
            raise ValidationError("vocab_size >= 2 and word_dim >= 1 required")
        if self.temporal_kernel < 1:
            raise ValidationError("temporal_kernel must be >= 1")


# ------------------------------------------------------------------ audio

def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def stft_sizes(sample_rate: float, window_ms: float, hop_ms: float) -> tuple[int, int, int]:
    win = int(round(sample_rate * window_ms / 1000.0))
    hop = int(round(sample_rate * hop_ms / 1000.0))
    n_fft = 4 * (1 << int(np.ceil(np.log2(win))))
    return win, hop, n_fft


@lru_cache(maxsize=16)
def mel_filterbank(sample_rate: float, n_fft: int, n_mels: int, fmin: float,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters with unit peak, shape [n_fft//2+1, n_mels]."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    return fb.T.copy()


def mel_centers(sample_rate: float, n_mels: int, fmin: float, fmax: float | None = None):
    fmax = sample_rate / 2.0 if fmax is None else fmax
    return _mel_to_hz(np.linspace(_hz_to_mel(fmin), _hz_to_mel(fmax), n_mels + 2))[1:-1]


def log_mel(wave, sample_rate: float = 8000.0, n_bins: int = 80, window_ms: float = 25.0,
            hop_ms: float = 10.0, fmin: float = 60.0, floor: float = 1e-6) -> np.ndarray:
    """log(mel(|STFT|^2) + floor) for one wave [L] or a batch [N, L].

    Returns [frames, n_bins] (or [N, frames, n_bins]).
    """
    if isinstance(wave, AudioWave):
        sample_rate, wave = wave.sample_rate, wave.samples
    x = np.asarray(wave, dtype=np.float32)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    win, hop, n_fft = stft_sizes(sample_rate, window_ms, hop_ms)
    if x.shape[-1] < win:
        raise DataError(f"wave of {x.shape[-1]} samples is shorter than one {win}-sample window")
    n_frames = 1 + (x.shape[-1] - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    window = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)).astype(np.float32)
    frames = x[:, idx] * window
    spec = scipy.fft.rfft(frames, n=n_fft, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    fb = mel_filterbank(float(sample_rate), n_fft, n_bins, float(fmin)).astype(np.float32)
    mel = (power.reshape(-1, power.shape[-1]) @ fb).reshape(*power.shape[:-1], n_bins)
    out = np.log(mel + floor)
    return out[0] if single else out


# ------------------------------------------------------------------ video

class VideoEncoder:
    """f_v: [N,T,H,W,3] -> [N,d_v].

    ``conv3d-mini``: four (conv3d -> BN -> ReLU) blocks with stride-2 spatial
    downsampling, then spatio-temporal average pooling.
    ``shift-mini``: four residual conv2d blocks applied per frame, with a
    temporal channel shift before each block's first conv.
    """

    prefix = "video"

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        self.widths = (*cfg.video_widths, cfg.d_v)
        self.shift = ShiftConfig(cfg.shift_fraction, enabled=True)

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        cin = 3
        kt = self.cfg.temporal_kernel
        for i, cout in enumerate(self.widths):
            p = f"{self.prefix}.block{i}"
            if self.cfg.video_arch == "conv3d-mini":
                store.add_param(f"{p}.conv.w", nn.he_normal(rng, (kt, 3, 3, cin, cout), kt * 9 * cin))
                if self.cfg.video_bn:
                    store.add_bn(f"{p}.bn", cout)
                else:
                    store.add_param(f"{p}.conv.b", np.zeros(cout, np.float32))
            else:
                store.add_param(f"{p}.conv1.w", nn.he_normal(rng, (3, 3, cin, cout), 9 * cin))
                store.add_bn(f"{p}.bn1", cout)
                store.add_param(f"{p}.conv2.w", nn.he_normal(rng, (3, 3, cout, cout), 9 * cout))
                store.add_bn(f"{p}.bn2", cout)
                store.add_param(f"{p}.proj.w", nn.he_normal(rng, (1, 1, cin, cout), cin))
                store.add_bn(f"{p}.bnp", cout)
            cin = cout

    def __call__(self, store: ParamStore, frames, mode: str = "train",
                 shift: ShiftConfig | None = None) -> Tensor:
        x = frames if isinstance(frames, Tensor) else Tensor(frames)
        if x.ndim != 5 or x.shape[-1] != 3:
            raise ShapeMismatchError(f"video batch must be [N,T,H,W,3], got {x.shape}")
        if self.cfg.video_arch == "conv3d-mini":
            return self._conv3d_mini(store, x, mode)
        return self._shift_mini(store, x, mode, shift or self.shift)

    def conv_filter(self, store: ParamStore, i: int) -> Conv3dFilter:
        p = f"{self.prefix}.block{i}"
        bias = None if self.cfg.video_bn else store.params[f"{p}.conv.b"]
        return Conv3dFilter(store.params[f"{p}.conv.w"], bias, self.cfg.temporal_padding,
                            "zero", (1, 2, 2))

    def _conv3d_mini(self, store, x, mode):
        for i in range(len(self.widths)):
            x = nn.conv3d(x, self.conv_filter(store, i))
            if self.cfg.video_bn:
                x = nn.batch_norm(x, store.bn(f"{self.prefix}.block{i}.bn", mode))
            x = T.relu(x)
        return nn.pool(x, "spatiotemporal-avg")

    def _shift_mini(self, store, x, mode, shift: ShiftConfig):
        n, t = x.shape[:2]
        for i in range(len(self.widths)):
            x = residual_block(store, f"{self.prefix}.block{i}", x, mode, shift, n, t)
        return nn.pool(x, "spatiotemporal-avg")


def residual_block(store, p, x, mode, shift, n, t):
    """One shift-mini block on x [N,T,H,W,C]; returns [N,T,H',W',C']."""
    h, w, c = x.shape[2:]
    y = nn.temporal_shift(x, shift)
    y = T.reshape(y, (n * t, h, w, c))
    y = nn.conv2d(y, store.params[f"{p}.conv1.w"], stride=2)
    y = T.relu(nn.batch_norm(y, store.bn(f"{p}.bn1", mode)))
    y = nn.conv2d(y, store.params[f"{p}.conv2.w"], stride=1)
    y = nn.batch_norm(y, store.bn(f"{p}.bn2", mode))
    s = nn.conv2d(T.reshape(x, (n * t, h, w, c)), store.params[f"{p}.proj.w"], stride=2)
    s = nn.batch_norm(s, store.bn(f"{p}.bnp", mode))
    y = T.relu(T.add(y, s))
    return T.reshape(y, (n, t, *y.shape[1:]))


def encode_video(clip: VideoClip, cfg: EncoderConfig, store: ParamStore) -> np.ndarray:
    """Single-clip convenience wrapper (eval mode)."""
    with T.no_record():
        out = VideoEncoder(cfg)(store, clip.frames[None].astype(np.float32), mode="eval")
    return out.data[0]


# ------------------------------------------------------------------ audio net

class AudioEncoder:
    """f_a: log-mel [N,F,80] -> 2D conv stack -> spatial average -> [N,d_a]."""

    prefix = "audio"

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        self.widths = (*cfg.audio_widths, cfg.d_a)

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        cin = 1
        for i, cout in enumerate(self.widths):
            store.add_param(f"{self.prefix}.block{i}.conv.w", nn.he_normal(rng, (3, 3, cin, cout), 9 * cin))
            store.add_bn(f"{self.prefix}.block{i}.bn", cout)
            cin = cout

    def spectrogram(self, waves: np.ndarray, sample_rate: float) -> np.ndarray:
        c = self.cfg
        return log_mel(waves, sample_rate, c.n_mels, c.window_ms, c.hop_ms, c.fmin).astype(np.float32)

    def from_spectrogram(self, store: ParamStore, spec, mode: str = "train") -> Tensor:
        x = spec if isinstance(spec, Tensor) else Tensor(spec)
        if x.ndim != 3 or x.shape[-1] != self.cfg.n_mels:
            raise ShapeMismatchError(f"spectrogram batch must be [N,F,{self.cfg.n_mels}]")
        x = T.reshape(x, (*x.shape, 1))
        for i in range(len(self.widths)):
            x = nn.conv2d(x, store.params[f"{self.prefix}.block{i}.conv.w"], stride=2)
            x = T.relu(nn.batch_norm(x, store.bn(f"{self.prefix}.block{i}.bn", mode)))
        return T.mean(x, axis=(1, 2))

    def __call__(self, store: ParamStore, waves: np.ndarray, sample_rate: float,
                 mode: str = "train", expected_len: int | None = None) -> Tensor:
        waves = np.atleast_2d(waves)
        if expected_len is not None and waves.shape[-1] != expected_len:
            raise DataError(f"audio has {waves.shape[-1]} samples, expected {expected_len}")
        return self.from_spectrogram(store, self.spectrogram(waves, sample_rate), mode)


def encode_audio(wave: AudioWave, cfg: EncoderConfig, store: ParamStore,
                 expected_len: int | None = None) -> np.ndarray:
    with T.no_record():
        out = AudioEncoder(cfg)(store, wave.samples[None], wave.sample_rate, "eval", expected_len)
    return out.data[0]


# ------------------------------------------------------------------ text

def random_word_table(vocab_size: int, word_dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    table = rng.standard_normal((vocab_size, word_dim)) / np.sqrt(word_dim)
    table[PAD_ID] = 0.0
    return table.astype(np.float32)


WORD_TABLE_MAGIC = b"MMVW"
WORD_TABLE_VERSION = 1


def save_word_table(table: np.ndarray, path) -> None:
    """Binary layout: magic, u32 version, u32 vocab, u32 dim, f32 rows (little-endian)."""
    table = np.asarray(table, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(WORD_TABLE_MAGIC)
        fh.write(struct.pack("<III", WORD_TABLE_VERSION, *table.shape))
        fh.write(table.tobytes(order="C"))


def load_word_table(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != WORD_TABLE_MAGIC or len(raw) < 16:
        raise DataError(f"{path}: not a word table file")
    version, vocab, dim = struct.unpack("<III", raw[4:16])
    if version != WORD_TABLE_VERSION:
        raise DataError(f"{path}: unsupported word table version {version}")
    body = raw[16:]
    if len(body) != 4 * vocab * dim:
        raise DataError(f"{path}: truncated word table")
    return np.frombuffer(body, dtype="<f4").reshape(vocab, dim).astype(np.float32)


class TextEncoder:
    """f_t: frozen word vectors -> shared linear map -> max over the 16 slots.

    The pad slot uses a learned embedding that goes through the same path.
    """

    prefix = "text"

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        if cfg.word_table_path:
            table = load_word_table(cfg.word_table_path)
            if table.shape != (cfg.vocab_size, cfg.word_dim):
                raise ValidationError(
                    f"word table {table.shape} does not match ({cfg.vocab_size}, {cfg.word_dim})"
                )
        else:
            table = random_word_table(cfg.vocab_size, cfg.word_dim, cfg.word_table_seed)
        self.table = table

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        c = self.cfg
        store.add_param(f"{self.prefix}.pad", (rng.standard_normal(c.word_dim) * 0.1).astype(np.float32))
        store.add_param(f"{self.prefix}.w", nn.glorot_uniform(rng, (c.word_dim, c.d_t), c.word_dim, c.d_t))
        store.add_param(f"{self.prefix}.b", np.zeros(c.d_t, np.float32))

    def __call__(self, store: ParamStore, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids)
        if ids.ndim != 2 or ids.shape[1] != TEXT_LEN:
            raise ShapeMismatchError(f"token batch must be [N,{TEXT_LEN}], got {ids.shape}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.cfg.vocab_size):
            raise ValidationError(f"token id out of vocabulary [0, {self.cfg.vocab_size})")
        pad = store.params[f"{self.prefix}.pad"]
        is_pad = (ids == PAD_ID)[..., None].astype(pad.dtype)
        words = Tensor(self.table[ids].astype(pad.dtype))
        emb = T.add(words, T.mul(Tensor(is_pad), pad))
        h = nn.linear(emb, store.params[f"{self.prefix}.w"], store.params[f"{self.prefix}.b"])
        return nn.pool(h, "max-over-axis", axis=1)


def encode_text(tokens: TokenSeq, cfg: EncoderConfig, store: ParamStore) -> np.ndarray:
    with T.no_record():
        out = TextEncoder(cfg)(store, tokens.ids[None])
    return out.data[0]
