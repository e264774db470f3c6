"""Contrastive objectives on unit-norm joint-space embeddings.

Negative-pair policies for an anchor sample i:

* ``both-directions``: {(v_i, x_j)}_{j!=i} U {(v_j, x_i)}_{j!=i}, 2(N-1) pairs.
* ``v-anchored``: {(v_i, x_j)}_{j!=i}, N-1 pairs.

MIL-NCE negatives built from a text candidate set P(x_j) average the
exponentiated scores over that set, so every other sample counts as one
negative regardless of how many candidates it carries.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeMismatchError, ValidationError
from .tensor import Tensor

NEGATIVE_POLICIES = ("both-directions", "v-anchored")
LOSS_KINDS = ("nce", "logistic")
LOSS_PRESETS = {
    # lambda_va : lambda_vt
    "ht-like": (1.0, 10.0),
    "ht+as-like": (1.0, 1.0),
}


@dataclass
class LossConfig:
    lambda_va: float = 1.0
    lambda_vt: float = 1.0
    tau: float = 0.07
    loss_kind: str = "nce"
    negatives: str = "both-directions"

    def __post_init__(self):
        if self.lambda_va < 0 or self.lambda_vt < 0:
            raise ValidationError("loss weights must be non-negative")
        if self.lambda_va + self.lambda_vt <= 0:
            raise ValidationError("lambda_va + lambda_vt must be positive")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise ValidationError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.negatives not in NEGATIVE_POLICIES:
            raise ValidationError(f"negatives must be one of {NEGATIVE_POLICIES}")

    @classmethod
    def from_preset(cls, name: str, **kw) -> "LossConfig":
        try:
            va, vt = LOSS_PRESETS[name]
        except KeyError:
            raise ValidationError(f"unknown loss preset {name!r}") from None
        return cls(lambda_va=va, lambda_vt=vt, **kw)


def num_negatives(n: int, policy: str = "both-directions") -> int:
    """|N(x)| for a batch of n samples."""
    return 2 * (n - 1) if policy == "both-directions" else n - 1


def _check(n: int, tau: float, policy: str):
    if n < 2:
        raise ValidationError(f"contrastive losses need N >= 2 samples, got {n}")
    if tau <= 0:
        raise ValidationError("tau must be positive")
    if policy not in NEGATIVE_POLICIES:
        raise ValidationError(f"unknown negative policy {policy!r}")


def nce_loss(zv: Tensor, za: Tensor, tau: float = 0.07,
             negatives: str = "both-directions") -> Tensor:
    """Mean over anchors of -log(e^{s_ii} / (e^{s_ii} + sum_{N(x_i)} e^{s'}))."""
    if zv.shape != za.shape or zv.ndim != 2:
        raise ShapeMismatchError(f"nce_loss needs matching [N,d] inputs, got {zv.shape}, {za.shape}")
    n = zv.shape[0]
    _check(n, tau, negatives)
    s = T.mul(T.matmul(zv, T.transpose(za)), 1.0 / tau)
    pos = T.getitem(s, (np.arange(n), np.arange(n)))
    if negatives == "v-anchored":
        lse = T.logsumexp(s, axis=1)
    else:
        w = np.ones((n, 2 * n))
        w[np.arange(n), n + np.arange(n)] = 0.0
        lse = T.logsumexp(T.concat([s, T.transpose(s)], axis=1), axis=1, weights=w)
    return T.mean(T.sub(lse, pos))


def mil_nce_loss(zv: Tensor, zt: Tensor, mask=None, tau: float = 0.07,
                 negatives: str = "both-directions") -> Tensor:
    """MIL-NCE with candidate sets.

    zv: [N, d] video embeddings. zt: [N, K, d] text candidates, ``mask``
    [N, K] marks which of the K slots are real candidates (default: all).
    """
    if zv.ndim != 2 or zt.ndim != 3 or zt.shape[0] != zv.shape[0] or zt.shape[2] != zv.shape[1]:
        raise ShapeMismatchError(f"mil_nce_loss shapes {zv.shape} vs {zt.shape}")
    n, k, d = zt.shape
    _check(n, tau, negatives)
    mask = np.ones((n, k)) if mask is None else np.asarray(mask, dtype=np.float64)
    if mask.shape != (n, k):
        raise ShapeMismatchError(f"candidate mask must be {(n, k)}, got {mask.shape}")
    count = mask.sum(axis=1)
    if np.any(count < 1):
        raise ValidationError("every candidate set must be non-empty")

    eye = np.eye(n, dtype=bool)[:, :, None]
    s = T.mul(T.matmul(zv, T.transpose(T.reshape(zt, (n * k, d)))), 1.0 / tau)  # [N, N*K]
    s3 = T.reshape(s, (n, n, k))  # s3[i, j, p] = v_i . t_jp
    # anchor-row block: own candidates count fully, others averaged
    w_row = np.where(eye, mask[None, :, :], (mask / count[:, None])[None, :, :])
    w_pos = np.where(eye, mask[None, :, :], 0.0)
    num = T.logsumexp(s, axis=1, weights=w_pos.reshape(n, n * k))
    if negatives == "v-anchored":
        den = T.logsumexp(s, axis=1, weights=w_row.reshape(n, n * k))
    else:
        # column block: other videos against this anchor's candidates
        s_col = T.reshape(T.transpose(s3, (1, 0, 2)), (n, n * k))
        w_col = np.where(eye, 0.0, (mask / count[:, None])[:, None, :])
        w = np.concatenate([w_row.reshape(n, n * k), w_col.reshape(n, n * k)], axis=1)
        den = T.logsumexp(T.concat([s, s_col], axis=1), axis=1, weights=w)
    return T.mean(T.sub(den, num))


def logistic_pair_loss(zv: Tensor, za: Tensor, labels, tau: float = 0.07) -> Tensor:
    """Mean binary cross-entropy of sigmoid(zv . za / tau) against 0/1 labels."""
    labels = np.asarray(labels, dtype=zv.dtype)
    if zv.shape[0] == 0:
        raise ValidationError("logistic_pair_loss on an empty pair list")
    if zv.shape != za.shape or labels.shape != (zv.shape[0],):
        raise ShapeMismatchError("logistic_pair_loss: mismatched pair arrays")
    s = T.mul(T.sum(T.mul(zv, za), axis=-1), 1.0 / tau)
    return T.mean(T.sub(T.softplus(s), T.mul(s, labels)))


def logistic_batch_loss(zv: Tensor, za: Tensor, tau: float = 0.07) -> Tensor:
    """Balanced logistic loss: each positive (i, i) paired with the negative (i, i+1 mod N)."""
    n = zv.shape[0]
    _check(n, tau, "both-directions")
    idx = np.arange(n)
    shifted = T.getitem(za, (idx + 1) % n)
    pv = T.concat([zv, zv], axis=0)
    pa = T.concat([za, shifted], axis=0)
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    return logistic_pair_loss(pv, pa, labels, tau)


@dataclass
class Batch:
    """Joint-space embeddings for one minibatch, split by modality pair.

    ``va_index`` / ``vt_index`` list which of the ``n`` samples take part in
    each loss term (those with both modalities present).
    """

    n: int
    zv_va: Tensor | None = None
    za_va: Tensor | None = None
    zv_vt: Tensor | None = None
    zt_vt: Tensor | None = None  # [n_t, K, d]
    zt_mask: np.ndarray | None = None  # [n_t, K]
    va_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    vt_index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"a batch needs N >= 2 samples, got {self.n}")
        if self.zt_mask is not None and np.any(np.asarray(self.zt_mask).sum(axis=1) < 1):
            raise ValidationError("every present text sample needs |P(x)| >= 1")


def combined_loss(batch: Batch, cfg: LossConfig):
    """lambda_va * VA term + lambda_vt * VT term.

    Each term averages over the samples that have both of its modalities, so
    dropping a sample's text reweights the remaining ones and keeps the
    term's total weight fixed. A term with fewer than two participating
    samples contributes 0. Returns (total, {"va": Tensor, "vt": Tensor}).
    """
    parts = {}
    dtype = next((z.dtype for z in (batch.zv_va, batch.zv_vt) if z is not None), np.float64)
    zero = Tensor(np.zeros((), dtype=dtype))
    if batch.zv_va is not None and batch.zv_va.shape[0] >= 2 and cfg.lambda_va > 0:
        if cfg.loss_kind == "logistic":
            parts["va"] = logistic_batch_loss(batch.zv_va, batch.za_va, cfg.tau)
        else:
            parts["va"] = nce_loss(batch.zv_va, batch.za_va, cfg.tau, cfg.negatives)
    else:
        parts["va"] = zero
    if batch.zv_vt is not None and batch.zv_vt.shape[0] >= 2 and cfg.lambda_vt > 0:
        parts["vt"] = mil_nce_loss(batch.zv_vt, batch.zt_vt, batch.zt_mask, cfg.tau, cfg.negatives)
    else:
        parts["vt"] = zero
    total = T.add(T.mul(parts["va"], cfg.lambda_va), T.mul(parts["vt"], cfg.lambda_vt))
    return total, parts


def uniform_score_loss(n: int, n_candidates: int = 1, policy: str = "both-directions") -> float:
    """Loss value when every score in the batch is equal."""
    return float(np.log1p(num_negatives(n, policy) / n_candidates))
