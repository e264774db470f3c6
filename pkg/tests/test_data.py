import colorsys
import dataclasses

import numpy as np
import pytest
from scipy import ndimage

from mmv import data as D
from mmv import losses as L
from mmv.encoders import EncoderConfig, log_mel
from mmv.errors import CorruptFileError, DataError, ValidationError, VersionMismatchError
from mmv.evaluation import ProbeConfig, linear_probe
from mmv.graphs import GraphConfig
from mmv.model import MMVModel

SPEC = D.WorldSpec()


def test_generation_is_deterministic_bytewise():
    a, b = D.generate(SPEC, 3, 4), D.generate(SPEC, 3, 4)
    for x, y in zip(a, b):
        assert x.video.tobytes() == y.video.tobytes()
        assert x.audio.tobytes() == y.audio.tobytes()
        assert x.text_candidates.tobytes() == y.text_candidates.tobytes()
    c = D.generate(SPEC, 4, 1)[0]
    assert c.video.tobytes() != a[0].video.tobytes()
    # stateless: sample i does not depend on how many came before
    assert D.generate(SPEC, 3, 1, start=2)[0].video.tobytes() == a[2].video.tobytes()


def test_sample_contents_and_ranges():
    s = D.generate_sample(SPEC, 0, 0)
    assert s.video.shape == (12, 32, 32, 3) and s.video.dtype == np.float32
    assert 0 <= s.video.min() and s.video.max() <= 1
    assert s.audio.shape == (SPEC.source_samples,) and np.abs(s.audio).max() <= 1
    assert 0 <= s.label < SPEC.num_classes
    assert s.caption.shape == (16,)


def _aligned(spec, s):
    words = set(spec.class_words(s.label).tolist())
    return [bool(set(c.tolist()) & words) for c in s.text_candidates]


def test_p_mis_zero_k1_single_candidate_always_class_consistent():
    spec = dataclasses.replace(SPEC, p_mis=0.0, candidates=1, missing_text=0.0)
    for s in D.generate(spec, 1, 40):
        assert len(s.text_candidates) == 1 and _aligned(spec, s) == [True]
        assert spec.variant_word(s.variant) in s.text_candidates[0]


def test_misalignment_rate_matches_p_mis():
    spec = dataclasses.replace(SPEC, missing_text=0.0, p_mis=0.25)
    hits = [any(_aligned(spec, s)) for s in D.generate(spec, 2, 400)]
    rate = 1 - np.mean(hits)
    assert abs(rate - 0.25) < 3 * np.sqrt(0.25 * 0.75 / 400)


def test_missing_text_fraction():
    assert all(not s.has_text for s in D.generate(dataclasses.replace(SPEC, missing_text=1.0), 0, 20))
    frac = np.mean([not s.has_text for s in D.generate(SPEC, 5, 300)])
    assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / 300)


def test_worldspec_validation():
    for bad in ({"num_classes": 1}, {"p_mis": 1.5}, {"missing_text": -0.1}, {"candidates": 0},
                {"clip_frames": 20}, {"vocab_size": 20}, {"height": 12, "width": 12}):
        with pytest.raises(ValidationError):
            D.WorldSpec(**bad)
    with pytest.raises(ValidationError):
        D.generate(SPEC, 0, -1)


def test_sample_needs_two_modalities():
    with pytest.raises(ValidationError):
        D.MultimodalSample(np.zeros((1, 2, 2, 3)), None, np.zeros((0, 16), np.int32), 0, 0, np.zeros(16))


def test_audio_class_separability_fixture():
    # per-class mean log-mel features are linearly separable on the default world
    samples = D.generate(SPEC, 11, 320)
    feats = log_mel(np.stack([s.audio for s in samples])).mean(axis=1)
    labels = np.array([s.label for s in samples])
    res = linear_probe(feats, labels, ProbeConfig(epochs=200))
    assert res.accuracy > 0.9


# ---------------------------------------------------------------- augmentation

def test_disabled_augmentation_is_identity_on_source():
    s = D.generate_sample(SPEC, 0, 1)
    out = D.augment(s, D.AugmentConfig.disabled(), np.random.default_rng(0), SPEC)
    np.testing.assert_array_equal(out.video, s.video)
    np.testing.assert_array_equal(out.audio, s.audio)


def test_augment_output_shapes_and_label_preserved():
    s = D.generate_sample(SPEC, 0, 2)
    rng = np.random.default_rng(1)
    for _ in range(5):
        out = D.augment(s, D.AugmentConfig(), rng, SPEC)
        assert out.video.shape == (8, 28, 28, 3)
        assert out.audio.shape == (SPEC.clip_samples,)
        assert 0 <= out.video.min() and out.video.max() <= 1
        assert out.label == s.label and out.variant == s.variant
        assert out.text_candidates is s.text_candidates


def test_flip_twice_recovers_crop():
    x = np.random.default_rng(2).uniform(size=(2, 10, 10, 3))
    c = D.crop(x, 1, 2, 6)
    np.testing.assert_array_equal(D.flip(D.flip(c)), c)
    with pytest.raises(DataError):
        D.crop(x, 0, 0, 11)
    with pytest.raises(DataError):
        D.augment(D.generate_sample(SPEC, 0, 0), D.AugmentConfig(crop_size=40, scale_jitter=None),
                  np.random.default_rng(0), SPEC)


def test_color_jitter_range_over_1000_draws():
    rng = np.random.default_rng(3)
    cfg = D.AugmentConfig()
    for _ in range(1000):
        x = rng.uniform(size=(1, 4, 4, 3)).astype(np.float32)
        y = D.color_jitter(x, cfg, rng)
        assert y.min() >= 0.0 and y.max() <= 1.0


def test_hsv_conversions_match_colorsys():
    rgb = np.random.default_rng(4).uniform(size=(200, 3))
    h, s, v = D._rgb_to_hsv(rgb)
    for i in range(200):
        ref = colorsys.rgb_to_hsv(*rgb[i])
        assert np.allclose((h[i], s[i], v[i]), ref, atol=1e-12) or abs(abs(h[i] - ref[0]) - 1) < 1e-12
        np.testing.assert_allclose(D._hsv_to_rgb(ref[0], ref[1], ref[2]), colorsys.hsv_to_rgb(*ref), atol=1e-12)


@pytest.mark.parametrize("out", [(20, 25), (40, 36), (32, 32)])
def test_resize_matches_scipy_zoom(out):
    x = np.random.default_rng(5).uniform(size=(2, 32, 32, 3))
    ref = ndimage.zoom(x, (1, out[0] / 32, out[1] / 32, 1), order=1, mode="nearest", grid_mode=True)
    np.testing.assert_allclose(D.resize(x, *out), ref, atol=1e-10)


def test_temporal_jitter_zero_is_identity_and_bounds_hold():
    s = D.generate_sample(SPEC, 0, 3)
    n = SPEC.clip_samples
    rng = np.random.default_rng(6)
    for start in range(SPEC.source_frames - SPEC.clip_frames + 1):
        a0 = int(round(start / SPEC.fps * SPEC.sample_rate))
        np.testing.assert_array_equal(D.temporal_jitter(s, 0.0, rng, start, SPEC), s.audio[a0: a0 + n])
    for _ in range(500):
        start = int(rng.integers(0, 5))
        out = D.temporal_jitter(s, 0.8, rng, start, SPEC)
        assert len(out) == n
        # the window must be a contiguous slice of the source
        pos = np.flatnonzero(s.audio == out[0])
        assert any(np.array_equal(s.audio[p: p + n], out) for p in pos)
    with pytest.raises(DataError):
        D.temporal_jitter(dataclasses.replace(s, audio=s.audio[:100]), 0.1, rng, 0, SPEC)


def test_jitter_disabled_by_default():
    assert D.AugmentConfig().temporal_jitter_sec == 0.0


def test_audio_noise_variance():
    s = D.generate_sample(SPEC, 0, 4)
    cfg = D.AugmentConfig(temporal_sampling=False, scale_jitter=None, crop_size=None, flip_prob=0,
                          brightness=0, saturation=0, contrast=0, hue=0, audio_noise=0.01)
    out = D.augment(s, cfg, np.random.default_rng(7), SPEC)
    var = np.var(out.audio.astype(np.float64) - s.audio)
    assert var == pytest.approx(0.01 * np.abs(s.audio).max(), rel=0.05)


# ---------------------------------------------------------------- batches

@pytest.fixture(scope="module")
def tiny_model():
    enc = EncoderConfig(d_v=8, d_a=8, d_t=8, video_widths=(4, 4, 4), audio_widths=(4, 4, 4))
    return MMVModel.create(enc, GraphConfig(d_hidden=16), seed=0).with_store(
        MMVModel.create(enc, GraphConfig(d_hidden=16), seed=0).store.astype(np.float64))


def _views(n, seed=0, spec=SPEC):
    return [D.eval_view(s, spec, 28) for s in D.generate(spec, seed, n)]


def test_make_batch_presence_and_counts(tiny_model):
    views = _views(6)
    b = D.make_batch(views, tiny_model, "eval")
    has_t = [v.has_text for v in views]
    assert list(b.vt_index) == [i for i, h in enumerate(has_t) if h]
    assert list(b.va_index) == list(range(6))
    assert b.zt_vt.shape[:2] == (sum(has_t), 3)
    assert L.num_negatives(2, "v-anchored") == 2 // 2 * 1
    with pytest.raises(ValidationError):
        D.make_batch(views[:1], tiny_model)


def test_make_batch_permutation_leaves_loss_unchanged(tiny_model):
    views = _views(6, seed=1)
    perm = np.random.default_rng(0).permutation(6)
    t1, _ = L.combined_loss(D.make_batch(views, tiny_model, "eval"), L.LossConfig())
    t2, _ = L.combined_loss(D.make_batch([views[i] for i in perm], tiny_model, "eval"), L.LossConfig())
    assert abs(t1.item() - t2.item()) < 1e-6


def test_appending_textless_sample_keeps_vt_component(tiny_model):
    views = _views(8, seed=2)
    textless = next(v for v in views if not v.has_text)
    base = [v for v in views if v is not textless]
    _, p1 = L.combined_loss(D.make_batch(base, tiny_model, "eval"), L.LossConfig())
    _, p2 = L.combined_loss(D.make_batch(base + [textless], tiny_model, "eval"), L.LossConfig())
    assert abs(p1["vt"].item() - p2["vt"].item()) < 1e-6


# ---------------------------------------------------------------- corpus file

def test_corpus_roundtrip_and_errors(tmp_path):
    samples = D.generate(SPEC, 0, 3)
    path = tmp_path / "c.mmvd"
    D.save_corpus(samples, SPEC, path)
    back, spec = D.load_corpus(path)
    assert spec == SPEC and len(back) == 3
    for a, b in zip(samples, back):
        assert a.video.tobytes() == b.video.tobytes() and a.audio.tobytes() == b.audio.tobytes()
        np.testing.assert_array_equal(a.text_candidates, b.text_candidates)
        assert (a.label, a.variant, a.index) == (b.label, b.variant, b.index)
    D.save_corpus(back, spec, tmp_path / "d.mmvd")
    assert path.read_bytes() == (tmp_path / "d.mmvd").read_bytes()

    raw = path.read_bytes()
    (tmp_path / "t.mmvd").write_bytes(raw[:-10])
    with pytest.raises(CorruptFileError):
        D.load_corpus(tmp_path / "t.mmvd")
    (tmp_path / "v.mmvd").write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(VersionMismatchError):
        D.load_corpus(tmp_path / "v.mmvd")


def test_empty_corpus_is_valid(tmp_path):
    D.save_corpus([], SPEC, tmp_path / "e.mmvd")
    samples, spec = D.load_corpus(tmp_path / "e.mmvd")
    assert samples == [] and spec == SPEC


def test_sample_source_modes():
    src = D.SampleSource(SPEC, seed=0, size=None)
    assert len(src) == 0
    assert src[5].video.tobytes() == D.generate_sample(SPEC, 0, 5).video.tobytes()
    samples = D.generate(SPEC, 1, 2)
    assert D.SampleSource(SPEC, samples=samples)[1] is samples[1]
