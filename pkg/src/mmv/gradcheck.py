"""Finite-difference gradient suite shared by the CLI and the tests.

Each case builds a scalar function of float64 tensors for a given RNG. Op
outputs are contracted with a fixed random tensor so every output coordinate
contributes, and inputs are drawn away from kinks and ties so central
differences with eps=1e-5 are well defined.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

THRESHOLD = 1e-4
EPS = 1e-5
SCOPES = ("ops", "losses", "end-to-end")


@dataclass
class GradCase:
    name: str
    scope: str
    build: Callable  # rng -> (f, [Tensor, ...])
    seeds: int = 20
    max_coords: int | None = None
    eps: float = EPS
    floor: float = 1e-8  # relative-error denominator floor


@dataclass
class CaseResult:
    name: str
    scope: str
    max_rel_error: float
    seeds: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < THRESHOLD


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64))


def _proj(rng, shape):
    return rng.standard_normal(shape)


def _away(rng, shape, lo=0.1):
    """Random values with |x| >= lo (away from the kinks of relu/abs)."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.5, size=shape)


def _contract(fn, out_shape, rng):
    r = _proj(rng, out_shape)
    return lambda *xs: T.sum(T.mul(fn(*xs), r))


def _unary(op_name, sample):
    def build(rng):
        x = sample(rng, (3, 4))
        return _contract(lambda a: getattr(T, op_name)(a), x.shape, rng), [_t(x)]
    return build


def _binary(op_name):
    def build(rng):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4,))
        if op_name == "div":
            b = _away(rng, (4,), 0.5)
        return _contract(lambda x, y: getattr(T, op_name)(x, y), (3, 4), rng), [_t(a), _t(b)]
    return build


def _distinct(rng, shape, gap=0.05):
    """Values whose pairwise gaps exceed ``gap`` (no argmax ties)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, gap / 4, n)).reshape(shape) - n * gap / 2


def _b_max(rng):
    x = _distinct(rng, (4, 5))
    return _contract(lambda a: T.max(a, axis=1), (4,), rng), [_t(x)]


def _b_max_all(rng):
    x = _distinct(rng, (3, 4))
    return (lambda a: T.mul(T.max(a), 1.7)), [_t(x)]


def _b_sum(rng):
    x = rng.standard_normal((3, 4, 2))
    return _contract(lambda a: T.sum(a, axis=(0, 2), keepdims=True), (1, 4, 1), rng), [_t(x)]


def _b_mean(rng):
    x = rng.standard_normal((3, 4, 2))
    return _contract(lambda a: T.mean(a, axis=1), (3, 2), rng), [_t(x)]


def _b_lse(rng):
    # unit-scale logits on a large row offset: exercises the max shift while
    # keeping every softmax weight above difference round-off
    x = rng.standard_normal((4, 6)) + rng.uniform(-40, 40, (4, 1))
    w = rng.uniform(0, 2, (4, 6)) * (rng.random((4, 6)) > 0.3)
    w[:, 0] = 1.0
    return _contract(lambda a: T.logsumexp(a, axis=1, weights=w), (4,), rng), [_t(x)]


def _b_matmul(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    return _contract(T.matmul, (2, 3, 5), rng), [_t(a), _t(b)]


def _b_reshape(rng):
    x = rng.standard_normal((3, 4))
    return _contract(lambda a: T.reshape(a, (2, 6)), (2, 6), rng), [_t(x)]


def _b_transpose(rng):
    x = rng.standard_normal((2, 3, 4))
    return _contract(lambda a: T.transpose(a, (2, 0, 1)), (4, 2, 3), rng), [_t(x)]


def _b_concat(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 4))
    return _contract(lambda x, y: T.concat([x, y], axis=1), (2, 7), rng), [_t(a), _t(b)]


def _b_stack(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    return _contract(lambda x, y: T.stack([x, y], axis=1), (2, 2, 3), rng), [_t(a), _t(b)]


def _b_getitem(rng):
    x = rng.standard_normal((5, 4))
    idx = np.array([0, 2, 2, 4])
    return _contract(lambda a: T.getitem(T.getitem(a, idx), (slice(None), slice(1, 3))), (4, 2), rng), [_t(x)]


def _b_take_rows(rng):
    table = rng.standard_normal((6, 3))
    ids = np.array([[0, 5, 5], [2, 0, 1]])
    return _contract(lambda t: T.take_rows(t, ids), (2, 3, 3), rng), [_t(table)]


def _b_l2n(rng):
    x = rng.standard_normal((4, 5))
    return _contract(lambda a: T.l2_normalize(a), (4, 5), rng), [_t(x)]


def _b_conv_same(rng):
    x = rng.standard_normal((2, 4, 5, 5, 2))
    w = rng.standard_normal((3, 3, 3, 2, 3)) * 0.3
    b = rng.standard_normal(3)
    pad = ((1, 1), (1, 1), (1, 1))
    out = T.conv3d(_t(x), _t(w), _t(b), (1, 2, 2), pad).shape
    return _contract(lambda a, k, c: T.conv3d(a, k, c, (1, 2, 2), pad), out, rng), [_t(x), _t(w), _t(b)]


def _b_conv_valid(rng):
    x = rng.standard_normal((1, 5, 4, 4, 2))
    w = rng.standard_normal((2, 2, 3, 2, 2)) * 0.3
    out = T.conv3d(_t(x), _t(w), stride=(2, 1, 1)).shape
    return _contract(lambda a, k: T.conv3d(a, k, stride=(2, 1, 1)), out, rng), [_t(x), _t(w)]


def _b_conv2d(rng):
    x = rng.standard_normal((2, 5, 5, 2))
    w = rng.standard_normal((3, 3, 2, 3)) * 0.3
    return _contract(lambda a, k: nn.conv2d(a, k, stride=2), (2, 3, 3, 3), rng), [_t(x), _t(w)]


def _b_bn(training):
    def build(rng):
        x = rng.standard_normal((2, 3, 3, 4)) * 2 + 1
        g, b = rng.uniform(0.5, 1.5, 4), rng.standard_normal(4)
        mm, mv = rng.standard_normal(4), rng.uniform(0.5, 2, 4)

        def f(a, gamma, beta):
            return T.batch_norm(a, gamma, beta, mm.copy(), mv.copy(), training, update_stats=False)
        return _contract(f, x.shape, rng), [_t(x), _t(g), _t(b)]
    return build


def _b_shift(rng):
    x = rng.standard_normal((2, 4, 3, 8))
    return _contract(lambda a: T.temporal_shift(a, 2), x.shape, rng), [_t(x)]


def _b_pool(kind, axis=None):
    def build(rng):
        x = _distinct(rng, (2, 3, 4, 4, 2), 0.01) if kind == "max-over-axis" else rng.standard_normal((2, 3, 4, 4, 2))
        out = nn.pool(_t(x), kind, axis).shape
        return _contract(lambda a: nn.pool(a, kind, axis), out, rng), [_t(x)]
    return build


def _b_linear(rng):
    x, w, b = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal(5)
    return _contract(nn.linear, (4, 5), rng), [_t(x), _t(w), _t(b)]


# ------------------------------------------------------------------ losses

def _unit(rng, shape):
    x = rng.standard_normal(shape)
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _b_nce(policy):
    def build(rng):
        n, d = int(rng.integers(2, 7)), 4
        tau = float(rng.uniform(0.1, 1.0))
        zv, za = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        from .losses import nce_loss

        return (lambda a, b: nce_loss(T.l2_normalize(a), T.l2_normalize(b), tau, policy)), [_t(zv), _t(za)]
    return build


def _b_milnce(policy):
    def build(rng):
        n, k, d = int(rng.integers(2, 6)), 3, 4
        tau = float(rng.uniform(0.1, 1.0))
        mask = (rng.random((n, k)) < 0.6).astype(float)
        mask[:, 0] = 1.0
        zv, zt = rng.standard_normal((n, d)), rng.standard_normal((n, k, d))
        from .losses import mil_nce_loss

        return (lambda a, b: mil_nce_loss(T.l2_normalize(a), T.l2_normalize(b), mask, tau, policy)), [_t(zv), _t(zt)]
    return build


def _b_logistic(rng):
    n, d = 6, 4
    labels = rng.integers(0, 2, n)
    from .losses import logistic_pair_loss

    return (lambda a, b: logistic_pair_loss(T.l2_normalize(a), T.l2_normalize(b), labels, 0.5)), \
        [_t(rng.standard_normal((n, d))), _t(rng.standard_normal((n, d)))]


def _b_combined(rng):
    from .losses import Batch, LossConfig, combined_loss

    n, k, d = 5, 3, 4
    va = np.array([0, 1, 2, 4])
    vt = np.array([0, 2, 3])
    mask = (rng.random((len(vt), k)) < 0.6).astype(float)
    mask[:, 0] = 1.0
    cfg = LossConfig(lambda_va=float(rng.uniform(0.5, 2)), lambda_vt=float(rng.uniform(0.5, 2)),
                     tau=float(rng.uniform(0.1, 1.0)))

    def f(v1, a1, v2, t2):
        b = Batch(n, T.l2_normalize(v1), T.l2_normalize(a1), T.l2_normalize(v2),
                  T.l2_normalize(t2), mask, va, vt)
        return combined_loss(b, cfg)[0]
    xs = [rng.standard_normal((len(va), d)), rng.standard_normal((len(va), d)),
          rng.standard_normal((len(vt), d)), rng.standard_normal((len(vt), k, d))]
    return f, [_t(x) for x in xs]


# ------------------------------------------------------------------ end to end

def _b_end_to_end(topology):
    def build(rng):
        from .data import AugmentConfig, WorldSpec, augment, generate, make_batch
        from .encoders import EncoderConfig
        from .graphs import GraphConfig
        from .losses import LossConfig, combined_loss
        from .model import MMVModel

        world = WorldSpec(height=16, width=16, source_frames=4, clip_frames=4, shape_radius=(2.0, 3.0),
                          missing_text=0.0)
        enc = EncoderConfig(video_widths=(2, 2, 2), audio_widths=(2, 2, 2), d_v=4, d_a=4, d_t=4, word_dim=4)
        # full-size output weights: the default 0.05 scale pushes many gradients below
        # what central differences resolve in float64. The aligned unit bias keeps
        # every embedding away from the zero vector, where l2-normalisation is singular.
        graph = GraphConfig(topology=topology, d_va=3, d_vt=3, d_vat=3, d_hidden=4, init_scale=1.0)
        seed = int(rng.integers(1 << 30))
        model = MMVModel.create(enc, graph, seed, world.sample_rate)
        model.store = model.store.astype(np.float64)
        aug = AugmentConfig.disabled()
        samples = [augment(s, aug, rng, world) for s in generate(world, seed, 4)]
        samples[3] = type(samples[3])(samples[3].video, samples[3].audio, samples[3].text_candidates[:0],
                                      samples[3].label, samples[3].variant, samples[3].caption)
        for s in samples:
            s.video = s.video.astype(np.float64)
        names = sorted(model.store.params)
        cfg = LossConfig(tau=0.5)

        def f(*vals):
            for name, v in zip(names, vals):
                model.store.params[name] = v
            batch = make_batch(samples, model, "train", sample_rate=world.sample_rate)
            return combined_loss(batch, cfg)[0]
        # BN moving statistics update on every forward but do not enter train-mode outputs
        return f, [model.store.params[k] for k in names]
    return build


def _cases() -> list[GradCase]:
    c = [
        GradCase("add", "ops", _binary("add")),
        GradCase("sub", "ops", _binary("sub")),
        GradCase("mul", "ops", _binary("mul")),
        GradCase("div", "ops", _binary("div")),
        GradCase("neg", "ops", _unary("neg", lambda r, s: r.standard_normal(s))),
        GradCase("relu", "ops", _unary("relu", _away)),
        GradCase("exp", "ops", _unary("exp", lambda r, s: r.standard_normal(s))),
        GradCase("log", "ops", _unary("log", lambda r, s: r.uniform(0.5, 2.0, s))),
        GradCase("abs", "ops", _unary("absolute", _away)),
        GradCase("square", "ops", _unary("square", lambda r, s: r.standard_normal(s))),
        GradCase("sigmoid", "ops", _unary("sigmoid", lambda r, s: 3 * r.standard_normal(s))),
        GradCase("softplus", "ops", _unary("softplus", lambda r, s: 3 * r.standard_normal(s))),
        GradCase("sum", "ops", _b_sum),
        GradCase("mean", "ops", _b_mean),
        GradCase("max-axis", "ops", _b_max),
        GradCase("max-all", "ops", _b_max_all),
        GradCase("logsumexp", "ops", _b_lse),
        GradCase("matmul", "ops", _b_matmul),
        GradCase("reshape", "ops", _b_reshape),
        GradCase("transpose", "ops", _b_transpose),
        GradCase("concat", "ops", _b_concat),
        GradCase("stack", "ops", _b_stack),
        GradCase("getitem", "ops", _b_getitem),
        GradCase("take_rows", "ops", _b_take_rows),
        GradCase("l2_normalize", "ops", _b_l2n),
        GradCase("conv3d-same-strided", "ops", _b_conv_same),
        GradCase("conv3d-valid", "ops", _b_conv_valid),
        GradCase("conv2d", "ops", _b_conv2d),
        GradCase("batch_norm-train", "ops", _b_bn(True)),
        GradCase("batch_norm-eval", "ops", _b_bn(False)),
        GradCase("temporal_shift", "ops", _b_shift),
        GradCase("linear", "ops", _b_linear),
    ]
    for kind, axis in (("spatial-avg", None), ("temporal-avg", None), ("spatiotemporal-avg", None),
                       ("max-over-axis", 2)):
        c.append(GradCase(f"pool-{kind}", "ops", _b_pool(kind, axis)))
    for policy in ("both-directions", "v-anchored"):
        c.append(GradCase(f"nce-{policy}", "losses", _b_nce(policy)))
        c.append(GradCase(f"mil_nce-{policy}", "losses", _b_milnce(policy)))
    c.append(GradCase("logistic_pair", "losses", _b_logistic))
    c.append(GradCase("combined_loss", "losses", _b_combined))
    for topo in ("fac", "shared", "disjoint"):
        # whole ReLU/max-pool networks have kinks; a smaller step straddles one less
        # often, and the floor sits above its float64 difference noise (~1e-10)
        c.append(GradCase(f"end-to-end-{topo}", "end-to-end", _b_end_to_end(topo), seeds=2, max_coords=6,
                          eps=1e-6, floor=1e-5))
    return c


CASES = _cases()


def run_case(case: GradCase, seeds: int | None = None, eps: float | None = None) -> CaseResult:
    worst = 0.0
    eps = case.eps if eps is None else eps
    n = seeds if seeds is not None else case.seeds
    for seed in range(n):
        rng = np.random.default_rng([seed, 7919])
        f, inputs = case.build(rng)
        worst = max(worst, T.grad_check(f, inputs, eps, case.max_coords, seed, case.floor))
    return CaseResult(case.name, case.scope, worst, n)


def run_suite(scope: str = "ops", seeds: int | None = None, names=None, report=None) -> list[CaseResult]:
    """Run every case of ``scope`` ("ops", "losses", "end-to-end" or "all")."""
    if scope != "all" and scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES} or 'all'")
    out = []
    for case in CASES:
        if (scope == "all" or case.scope == scope) and (names is None or case.name in names):
            res = run_case(case, seeds)
            out.append(res)
            if report is not None:
                report(res)
    if names and not out:
        raise ValueError(f"no {scope} case named {', '.join(names)}")
    return out
