"""Frozen-feature linear probe, zero-shot retrieval and clip-averaged features."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import (DataError, SpaceMismatchError, UnreachableTaskError, ValidationError)
from .tensor import Tensor

TASKS = ("probe-video", "probe-audio", "retrieval-t2v", "retrieval-t2a")


@dataclass
class ProbeConfig:
    l2_sweep: tuple = (1e-4, 1e-3, 1e-2, 1e-1)
    epochs: int = 300
    lr: float = 0.05
    train_fraction: float = 0.6
    val_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        self.l2_sweep = tuple(float(x) for x in self.l2_sweep)
        if not self.l2_sweep:
            raise ValidationError("l2_sweep must be non-empty")
        if min(self.l2_sweep) < 0:
            raise ValidationError("l2 strengths must be >= 0")
        if self.train_fraction <= 0 or self.val_fraction <= 0 \
                or self.train_fraction + self.val_fraction >= 1:
            raise ValidationError("need train, val and test fractions all > 0")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")


@dataclass
class EvalSettings:
    data_seed: int = 1_000_003  # disjoint from the training stream's seed
    probe_samples: int = 1024
    retrieval_corpus: int = 256
    n_clips: int = 10
    ks: tuple = (1, 5, 10)

    def __post_init__(self):
        self.ks = tuple(int(k) for k in self.ks)


@dataclass
class ProbeResult:
    accuracy: float
    best_l2: float
    val_accuracy: float
    sweep: dict = field(default_factory=dict)  # l2 -> val accuracy


@dataclass
class RetrievalResult:
    recall_at: dict
    median_rank: float
    ranks: np.ndarray

    def __post_init__(self):
        ks = sorted(self.recall_at)
        vals = [self.recall_at[k] for k in ks]
        if any(b < a for a, b in zip(vals, vals[1:])) or self.median_rank < 1:
            raise ValidationError("inconsistent retrieval result")


# ------------------------------------------------------------------ probe

def split_indices(labels: np.ndarray, cfg: ProbeConfig):
    """Stratified train/val/test split; returns three index arrays."""
    rng = np.random.default_rng(cfg.split_seed)
    tr, va, te = [], [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(cfg.train_fraction * len(idx)))
        n_va = int(round(cfg.val_fraction * len(idx)))
        tr += list(idx[:n_tr])
        va += list(idx[n_tr: n_tr + n_va])
        te += list(idx[n_tr + n_va:])
    return np.sort(tr), np.sort(va), np.sort(te)


def fit_logistic(x: np.ndarray, y: np.ndarray, n_classes: int, l2: float, epochs: int,
                 lr: float, seed: int = 0):
    """Full-batch multinomial logistic regression with an L2 penalty on W (Adam)."""
    from .train import OptimizerState, adam_step

    rng = np.random.default_rng(seed)
    params = {
        "w": Tensor(rng.normal(0, 0.01, (x.shape[1], n_classes)), requires_grad=True),
        "b": Tensor(np.zeros(n_classes), requires_grad=True),
    }
    opt = OptimizerState.create(params)
    xt = Tensor(x.astype(np.float64))
    rows = np.arange(len(y))
    for _ in range(epochs):
        with T.GradientTape() as tape:
            logits = T.add(T.matmul(xt, params["w"]), params["b"])
            nll = T.mean(T.sub(T.logsumexp(logits, axis=1), T.getitem(logits, (rows, y))))
            loss = T.add(nll, T.mul(T.sum(T.square(params["w"])), l2))
        adam_step(params, tape.gradient(loss, params), opt, lr)
    return params["w"].data, params["b"].data


def linear_probe(features, labels, cfg: ProbeConfig | None = None) -> ProbeResult:
    """Top-1 test accuracy of the best-on-validation L2 strength."""
    cfg = cfg or ProbeConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ValidationError("features must be [n, d] with one label per row")
    tr, va, te = split_indices(y, cfg)
    classes = np.unique(y)
    if len(np.unique(y[tr])) < 2 or set(np.unique(y[tr])) != set(classes):
        raise DataError("degenerate split: some class is absent from the train split")
    if len(va) == 0 or len(te) == 0:
        raise DataError("degenerate split: empty validation or test split")
    _, y = np.unique(y, return_inverse=True)
    mu, sd = x[tr].mean(axis=0), x[tr].std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    z = (x - mu) / sd

    def acc(w, b, idx):
        return float(np.mean(np.argmax(z[idx] @ w + b, axis=1) == y[idx]))

    sweep, best = {}, None
    for l2 in cfg.l2_sweep:
        w, b = fit_logistic(z[tr], y[tr], len(classes), l2, cfg.epochs, cfg.lr, cfg.split_seed)
        sweep[l2] = acc(w, b, va)
        if best is None or sweep[l2] > best[0]:
            best = (sweep[l2], l2, w, b)
    val_acc, l2, w, b = best
    return ProbeResult(acc(w, b, te), l2, val_acc, sweep)


# ------------------------------------------------------------------ retrieval

def ranks_from_scores(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """1-based rank of each query's target under descending score.

    Ties go to the lower corpus index: an item ranks ahead of the target if it
    scores higher, or scores equal and sits earlier in the corpus.
    """
    scores = np.asarray(scores)
    targets = np.asarray(targets)
    q = np.arange(len(scores))
    s_gt = scores[q, targets][:, None]
    before = np.arange(scores.shape[1])[None, :] < targets[:, None]
    return 1 + np.sum(scores > s_gt, axis=1) + np.sum((scores == s_gt) & before, axis=1)


def retrieval_from_scores(scores, targets=None, ks=(1, 5, 10)) -> RetrievalResult:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise ValidationError("empty corpus")
    targets = np.arange(len(scores)) if targets is None else np.asarray(targets)
    r = ranks_from_scores(scores, targets)
    recall = {int(k): float(np.mean(r <= k)) for k in ks}
    return RetrievalResult(recall, float(np.median(r)), r)


def zero_shot_retrieval(queries, corpus, ks=(1, 5, 10), targets=None,
                        query_space: str | None = None, corpus_space: str | None = None) -> RetrievalResult:
    """Rank ``corpus`` rows by dot product with each query (cosine for unit vectors).

    ``queries``/``corpus`` are [n, d] arrays or lists of JointEmbedding; query i's
    ground truth is corpus item ``targets[i]`` (default: i).
    """
    q, qs = _as_matrix(queries, query_space)
    c, cs = _as_matrix(corpus, corpus_space)
    if qs is not None and cs is not None and qs != cs:
        raise SpaceMismatchError(f"query space {qs!r} differs from corpus space {cs!r}")
    if len(c) == 0:
        raise ValidationError("empty corpus")
    return retrieval_from_scores(q @ c.T, targets, ks)


def _as_matrix(items, space):
    if isinstance(items, np.ndarray):
        return items, space
    items = list(items)
    spaces = {z.space for z in items}
    if len(spaces) > 1:
        raise SpaceMismatchError(f"mixed spaces {sorted(spaces)} in one side of a retrieval")
    s = spaces.pop() if spaces else space
    d = len(items[0].vector) if items else 0
    return np.array([z.vector for z in items]).reshape(len(items), d), s


# ------------------------------------------------------------------ clip averaging

def clip_starts(length: int, clip: int, n_clips: int) -> np.ndarray:
    if length < clip:
        raise DataError(f"sample of {length} frames is shorter than one {clip}-frame clip")
    return np.round(np.linspace(0, length - clip, n_clips)).astype(int)


def clip_averaged_embedding(video: np.ndarray, encode, clip_frames: int, n_clips: int = 10) -> np.ndarray:
    """Mean of ``encode`` over ``n_clips`` linearly spaced clips of ``video`` [T,H,W,3].

    ``encode`` maps a [n, clip_frames, H, W, 3] batch to [n, d] (eval mode).
    """
    starts = clip_starts(len(video), clip_frames, n_clips)
    clips = np.stack([video[s: s + clip_frames] for s in starts])
    return np.asarray(encode(clips)).mean(axis=0)


# ------------------------------------------------------------------ tasks

def _center(frames, crop):
    from .data import center_crop

    return center_crop(frames, crop)


def video_features(model, samples, world, crop, n_clips: int, chunk: int = 16) -> np.ndarray:
    """Clip-averaged backbone features for each sample's source video."""
    out = []
    for i in range(0, len(samples), chunk):
        group = samples[i: i + chunk]
        starts = clip_starts(group[0].video.shape[0], world.clip_frames, n_clips)
        clips = np.stack([_center(s.video[a: a + world.clip_frames], crop) for s in group for a in starts])
        f = model.video_features(clips)
        out.append(f.reshape(len(group), n_clips, -1).mean(axis=1))
    return np.concatenate(out)


def audio_features(model, samples, world, n_clips: int, chunk: int = 16) -> np.ndarray:
    out = []
    n = world.clip_samples
    for i in range(0, len(samples), chunk):
        group = samples[i: i + chunk]
        starts = clip_starts(group[0].video.shape[0], world.clip_frames, n_clips)
        offs = [int(round(a / world.fps * world.sample_rate)) for a in starts]
        waves = np.stack([s.audio[o: o + n] for s in group for o in offs])
        f = model.audio_features(waves)
        out.append(f.reshape(len(group), n_clips, -1).mean(axis=1))
    return np.concatenate(out)


def _central_clips(samples, world, crop):
    a = (samples[0].video.shape[0] - world.clip_frames) // 2
    frames = np.stack([_center(s.video[a: a + world.clip_frames], crop) for s in samples])
    o = int(round(a / world.fps * world.sample_rate))
    waves = np.stack([s.audio[o: o + world.clip_samples] for s in samples])
    return frames, waves


def check_task(task: str, graph_cfg) -> None:
    if task not in TASKS:
        raise ValidationError(f"unknown task {task!r}; expected one of {TASKS}")
    if task == "retrieval-t2a" and not (graph_cfg.reachable("t", "vat") and graph_cfg.reachable("a", "vat")):
        raise UnreachableTaskError(
            f"text-to-audio retrieval needs a shared audio-text space; the {graph_cfg.topology} graph has none"
        )


def run_task(task: str, model, cfg, samples=None) -> dict:
    """Evaluate ``model`` on one downstream task; returns {metric: value}."""
    from .data import generate

    check_task(task, model.graph.cfg)
    world, ev = cfg.world, cfg.eval
    crop = cfg.augment.crop_size
    if task.startswith("probe"):
        samples = samples or generate(world, ev.data_seed, ev.probe_samples)
        labels = np.array([s.label for s in samples])
        if task == "probe-video":
            feats = video_features(model, samples, world, crop, ev.n_clips)
        else:
            feats = audio_features(model, samples, world, ev.n_clips)
        res = linear_probe(feats, labels, cfg.probe)
        return {"top1": res.accuracy, "val_top1": res.val_accuracy, "best_l2": res.best_l2,
                "chance": 1.0 / world.num_classes}
    samples = samples or generate(world, ev.data_seed + 1, ev.retrieval_corpus)
    captions = np.stack([s.caption for s in samples])
    frames, waves = _central_clips(samples, world, crop)
    if task == "retrieval-t2v":
        space = model.graph.cfg.loss_space("vt")
        corpus = model.embed_video(frames, space)
    else:
        space = "vat"
        corpus = model.embed_audio(waves, space)
    queries = model.embed_text(captions, space)
    res = zero_shot_retrieval(queries, corpus, ev.ks)
    out = {f"R@{k}": v for k, v in res.recall_at.items()}
    out["MedR"] = res.median_rank
    out["random_R@10"] = min(10, len(samples)) / len(samples)
    return out
