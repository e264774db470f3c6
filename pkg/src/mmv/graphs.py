"""Projection heads and the three modality embedding graphs.

Spaces are named by the modalities they hold: ``va`` (vision-audio),
``vt`` (vision-text) and ``vat`` (all three). Which (modality, space) pairs
exist depends on the topology:

========  ==========================================
shared    {v, a, t} x {vat}
disjoint  {v, a} x {va}  and  {v, t} x {vt}
fac       {v, a} x {va}  and  {v, a, t} x {vat}
========  ==========================================

In ``fac`` the only way into ``vat`` for vision and audio is through the
fine space: z_{v,vat} = g_{va->vat}(g_{v->va}(f_v)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .errors import SpaceMismatchError, TopologyError, ValidationError
from .nn import ParamStore
from .tensor import Tensor

TOPOLOGIES = ("shared", "disjoint", "fac")
HEAD_KINDS = ("linear", "nonlinear")
HEAD_INITS = ("aligned", "glorot")
MODALITIES = ("v", "a", "t")
SPACES = ("va", "vt", "vat")

REACHABLE = {
    "shared": frozenset({("v", "vat"), ("a", "vat"), ("t", "vat")}),
    "disjoint": frozenset({("v", "va"), ("a", "va"), ("v", "vt"), ("t", "vt")}),
    "fac": frozenset({("v", "va"), ("a", "va"), ("v", "vat"), ("a", "vat"), ("t", "vat")}),
}

# spaces in which the two loss terms are computed
LOSS_SPACES = {
    "shared": {"va": "vat", "vt": "vat"},
    "disjoint": {"va": "va", "vt": "vt"},
    "fac": {"va": "va", "vt": "vat"},
}


@dataclass
class GraphConfig:
    topology: str = "fac"
    d_va: int = 32
    d_vt: int = 32
    d_vat: int = 16
    video_head: str = "nonlinear"
    audio_head: str = "linear"
    text_head: str = "linear"
    fine_to_coarse_head: str = "linear"
    d_hidden: int = 128
    normalize_fine: bool = False  # fac: l2-normalize z_{m,va} before g_{va->vat}
    # "aligned": heads into a space share one random bias direction and start
    # with small output weights, so every initial score is nearly equal
    head_init: str = "aligned"
    init_scale: float = 0.05

    def __post_init__(self):
        if self.topology not in TOPOLOGIES:
            raise TopologyError(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        for kind in (self.video_head, self.audio_head, self.text_head, self.fine_to_coarse_head):
            if kind not in HEAD_KINDS:
                raise ValidationError(f"head kind must be one of {HEAD_KINDS}, got {kind!r}")
        if min(self.d_va, self.d_vt, self.d_vat, self.d_hidden) <= 0:
            raise ValidationError("space dimensions must be positive")
        if self.head_init not in HEAD_INITS:
            raise ValidationError(f"head_init must be one of {HEAD_INITS}, got {self.head_init!r}")
        if self.init_scale <= 0:
            raise ValidationError("init_scale must be positive")

    def space_dim(self, space: str) -> int:
        return {"va": self.d_va, "vt": self.d_vt, "vat": self.d_vat}[space]

    def reachable(self, modality: str, space: str) -> bool:
        return (modality, space) in REACHABLE[self.topology]

    def check(self, modality: str, space: str) -> None:
        if modality not in MODALITIES or space not in SPACES:
            raise TopologyError(f"unknown modality/space ({modality!r}, {space!r})")
        if not self.reachable(modality, space):
            raise TopologyError(
                f"({modality}, {space}) is unreachable in the {self.topology} embedding graph"
            )

    def loss_space(self, pair: str) -> str:
        return LOSS_SPACES[self.topology][pair]


@dataclass
class ProjectionHead:
    """linear: x W + b.  nonlinear: linear(d_hidden) -> BN -> ReLU -> linear(d_out)."""

    name: str
    kind: str
    d_in: int
    d_out: int
    d_hidden: int = 128

    def init(self, store: ParamStore, rng: np.random.Generator, bias=None, scale: float = 1.0) -> None:
        p = f"head.{self.name}"
        b = np.zeros(self.d_out, np.float32) if bias is None else np.asarray(bias, np.float32)
        if self.kind == "linear":
            w = nn.glorot_uniform(rng, (self.d_in, self.d_out), self.d_in, self.d_out)
            store.add_param(f"{p}.w", w * np.float32(scale))
            store.add_param(f"{p}.b", b.copy())
        else:
            h = self.d_hidden
            store.add_param(f"{p}.w1", nn.he_normal(rng, (self.d_in, h), self.d_in))
            store.add_bn(f"{p}.bn", h)
            w = nn.glorot_uniform(rng, (h, self.d_out), h, self.d_out)
            store.add_param(f"{p}.w2", w * np.float32(scale))
            store.add_param(f"{p}.b2", b.copy())

    def __call__(self, store: ParamStore, x: Tensor, mode: str = "train") -> Tensor:
        p = f"head.{self.name}"
        if self.kind == "linear":
            return nn.linear(x, store.params[f"{p}.w"], store.params[f"{p}.b"])
        h = nn.linear(x, store.params[f"{p}.w1"])
        h = T.relu(nn.batch_norm(h, store.bn(f"{p}.bn", mode)))
        return nn.linear(h, store.params[f"{p}.w2"], store.params[f"{p}.b2"])


class EmbeddingGraph:
    def __init__(self, cfg: GraphConfig, d_v: int, d_a: int, d_t: int):
        self.cfg = cfg
        kinds = {"v": cfg.video_head, "a": cfg.audio_head, "t": cfg.text_head}
        dims = {"v": d_v, "a": d_a, "t": d_t}
        h = cfg.d_hidden
        self.heads: dict[str, ProjectionHead] = {}

        def add(src, dst, kind, d_in):
            name = f"{src}_to_{dst}"
            self.heads[name] = ProjectionHead(name, kind, d_in, cfg.space_dim(dst), h)

        if cfg.topology == "shared":
            for m in MODALITIES:
                add(m, "vat", kinds[m], dims[m])
        elif cfg.topology == "disjoint":
            add("v", "va", kinds["v"], d_v)
            add("a", "va", kinds["a"], d_a)
            add("v", "vt", kinds["v"], d_v)
            add("t", "vt", kinds["t"], d_t)
        else:
            add("v", "va", kinds["v"], d_v)
            add("a", "va", kinds["a"], d_a)
            add("va", "vat", cfg.fine_to_coarse_head, cfg.d_va)
            add("t", "vat", kinds["t"], d_t)

    def init(self, store: ParamStore, rng: np.random.Generator) -> None:
        if self.cfg.head_init == "glorot":
            for head in self.heads.values():
                head.init(store, rng)
            return
        dirs = {}
        for s in SPACES:
            u = rng.standard_normal(self.cfg.space_dim(s))
            dirs[s] = u / np.linalg.norm(u)
        for name, head in self.heads.items():
            head.init(store, rng, dirs[name.rsplit("_to_", 1)[1]], self.cfg.init_scale)

    def embed(self, store: ParamStore, rep: Tensor, modality: str, spaces, mode: str = "train") -> dict:
        """Project one batch of backbone vectors into each requested space.

        Returns {space: Tensor [N, d_s]} with unit-norm rows. Shared
        intermediate results (the fine projection in fac) are computed once.
        """
        for s in spaces:
            self.cfg.check(modality, s)
        out = {}
        raw_fine = None
        for s in spaces:
            if self.cfg.topology == "fac" and modality in ("v", "a"):
                if raw_fine is None:
                    raw_fine = self.heads[f"{modality}_to_va"](store, rep, mode)
                if s == "va":
                    out[s] = T.l2_normalize(raw_fine)
                else:
                    fine = T.l2_normalize(raw_fine) if self.cfg.normalize_fine else raw_fine
                    out[s] = T.l2_normalize(self.heads["va_to_vat"](store, fine, mode))
            else:
                out[s] = T.l2_normalize(self.heads[f"{modality}_to_{s}"](store, rep, mode))
        return out

    def project(self, store: ParamStore, rep: Tensor, modality: str, space: str,
                mode: str = "train") -> Tensor:
        return self.embed(store, rep, modality, (space,), mode)[space]


@dataclass
class JointEmbedding:
    vector: np.ndarray
    modality: str
    space: str

    def __post_init__(self):
        n = float(np.linalg.norm(self.vector))
        if abs(n - 1.0) > 1e-5:
            raise ValidationError(f"joint embedding must have unit norm, got {n}")


def project(rep, modality: str, space: str, graph: EmbeddingGraph, store: ParamStore,
            mode: str = "eval") -> JointEmbedding:
    """Single-vector wrapper around :meth:`EmbeddingGraph.project`."""
    graph.cfg.check(modality, space)
    x = rep if isinstance(rep, Tensor) else Tensor(np.asarray(rep, dtype=np.float32)[None])
    with T.no_record():
        z = graph.project(store, x, modality, space, mode)
    return JointEmbedding(z.data[0], modality, space)


def similarity(z1: JointEmbedding, z2: JointEmbedding) -> float:
    if z1.space != z2.space:
        raise SpaceMismatchError(f"cannot compare a {z1.space} vector with a {z2.space} vector")
    return float(np.dot(z1.vector, z2.vector))
