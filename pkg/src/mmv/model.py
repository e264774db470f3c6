"""Backbones plus embedding graph, sharing one parameter store."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoders import AudioEncoder, EncoderConfig, TextEncoder, VideoEncoder
from .graphs import EmbeddingGraph, GraphConfig
from .nn import ParamStore


class MMVModel:
    def __init__(self, enc: EncoderConfig, graph: GraphConfig, sample_rate: float = 8000.0,
                 store: ParamStore | None = None):
        self.enc_cfg = enc
        self.sample_rate = float(sample_rate)
        self.video = VideoEncoder(enc)
        self.audio = AudioEncoder(enc)
        self.text = TextEncoder(enc)
        self.graph = EmbeddingGraph(graph, enc.d_v, enc.d_a, enc.d_t)
        self.store = store if store is not None else ParamStore()

    @classmethod
    def create(cls, enc: EncoderConfig, graph: GraphConfig, seed: int = 0,
               sample_rate: float = 8000.0) -> "MMVModel":
        m = cls(enc, graph, sample_rate)
        rng = np.random.default_rng(seed)
        m.video.init(m.store, rng)
        m.audio.init(m.store, rng)
        m.text.init(m.store, rng)
        m.graph.init(m.store, rng)
        return m

    def with_store(self, store: ParamStore) -> "MMVModel":
        return MMVModel(self.enc_cfg, self.graph.cfg, self.sample_rate, store)

    # eval-mode helpers returning plain arrays, processed in chunks
    def video_features(self, frames: np.ndarray, chunk: int = 64) -> np.ndarray:
        return _chunked(lambda x: self.video(self.store, x, "eval"), frames, chunk)

    def audio_features(self, waves: np.ndarray, chunk: int = 64) -> np.ndarray:
        return _chunked(lambda x: self.audio(self.store, x, self.sample_rate, "eval"), waves, chunk)

    def embed_video(self, frames: np.ndarray, space: str, chunk: int = 64) -> np.ndarray:
        return _chunked(lambda x: self.graph.project(
            self.store, self.video(self.store, x, "eval"), "v", space, "eval"), frames, chunk)

    def embed_audio(self, waves: np.ndarray, space: str, chunk: int = 64) -> np.ndarray:
        return _chunked(lambda x: self.graph.project(
            self.store, self.audio(self.store, x, self.sample_rate, "eval"), "a", space, "eval"),
            waves, chunk)

    def embed_text(self, ids: np.ndarray, space: str, chunk: int = 256) -> np.ndarray:
        return _chunked(lambda x: self.graph.project(
            self.store, self.text(self.store, x), "t", space, "eval"), ids, chunk)


def _chunked(fn, x: np.ndarray, chunk: int) -> np.ndarray:
    outs = []
    with T.no_record():
        for i in range(0, len(x), chunk):
            outs.append(fn(x[i: i + chunk]).data)
    return np.concatenate(outs, axis=0)
