import dataclasses

import numpy as np
import pytest

from mmv import deflation as DF
from mmv.encoders import EncoderConfig
from mmv.errors import DataError, ShapeMismatchError, ValidationError
from mmv.graphs import GraphConfig
from mmv.model import MMVModel
from mmv.nn import Conv3dFilter
from mmv.tensor import Tensor


def tiny_model(seed=0, **enc_kw):
    kw = dict(d_v=6, d_a=4, d_t=4, video_widths=(4, 5, 6), audio_widths=(2, 2, 2))
    kw.update(enc_kw)
    return MMVModel.create(EncoderConfig(**kw), GraphConfig(d_hidden=8), seed=seed)


def images(n, seed=0, size=12):
    return np.random.default_rng(seed).uniform(0, 1, (n, size, size, 3)).astype(np.float32)


# ---------------------------------------------------------------- filters

def test_deflate_kt1_returns_the_slice():
    w = np.random.default_rng(0).standard_normal((1, 3, 3, 2, 4))
    b = np.arange(4.0)
    f = DF.deflate_filters(Conv3dFilter(Tensor(w), Tensor(b), strides=(1, 2, 2)))
    np.testing.assert_array_equal(f.weights, w[0])
    np.testing.assert_array_equal(f.bias, b)
    assert f.stride == 2


def test_antisymmetric_filter_deflates_to_zero():
    half = np.random.default_rng(1).standard_normal((1, 3, 3, 2, 2))
    w = np.concatenate([half, np.zeros_like(half), -half])
    np.testing.assert_array_equal(DF.deflate_filters(Conv3dFilter(Tensor(w))).weights, 0)


def test_random_filter_matches_loop_sum():
    w = np.random.default_rng(2).standard_normal((3, 3, 3, 2, 3))
    out = DF.deflate_filters(Conv3dFilter(Tensor(w))).weights
    for h in range(3):
        for v in range(3):
            for i in range(2):
                for o in range(3):
                    assert out[h, v, i, o] == pytest.approx(w[0, h, v, i, o] + w[1, h, v, i, o] + w[2, h, v, i, o])


def test_unequal_spatial_stride_rejected():
    with pytest.raises(ShapeMismatchError):
        DF.deflate_filters(Conv3dFilter(Tensor(np.zeros((1, 1, 1, 1, 1))), strides=(1, 1, 2)))


# ---------------------------------------------------------------- equivalence

@pytest.mark.parametrize("seed", range(20))
def test_valid_padding_no_bn_deflation_is_exact(seed):
    model = tiny_model(seed, temporal_padding="valid", video_bn=False)
    for p in model.store.params.values():  # non-zero biases make the check stronger
        if p.name.endswith("conv.b"):
            p.data[:] = np.random.default_rng(seed).normal(0, 0.1, p.shape)
    imgs = images(3, seed)
    deflated = DF.DeflatedEncoder(model.enc_cfg, model.store)
    src = model.video_features(DF.static_video(imgs, 10))
    np.testing.assert_allclose(deflated.features(imgs), src, atol=1e-5, rtol=1e-5)


def test_zero_padding_gives_a_nonzero_naive_gap():
    model = tiny_model(0, temporal_padding="zero", video_bn=False)
    imgs = images(3)
    src = model.video_features(DF.static_video(imgs, 8))
    assert np.abs(DF.DeflatedEncoder(model.enc_cfg, model.store).features(imgs) - src).mean() > 1e-3


def test_recalibration_is_noop_when_naive_is_exact():
    model = tiny_model(1, temporal_padding="valid", video_bn=False)
    rep = DF.recalibrate(model, images(8), DF.DeflationJob(epochs=3), 10)
    assert rep.naive_gap < 1e-5 and abs(rep.final_gap - rep.naive_gap) < 1e-5


# ---------------------------------------------------------------- shift nets

def test_shift_net_single_frame_differs_from_deflated():
    model = tiny_model(2, video_arch="shift-mini", video_widths=(8, 8, 16), d_v=16)
    img = images(2, 3)
    src = model.video_features(DF.static_video(img, 1))
    out = DF.DeflatedEncoder(model.enc_cfg, model.store).features(img)
    assert np.abs(src - out).max() > 1e-4  # the T=1 shift zeroes channels; documented inequality


def test_shift_deflation_keeps_every_weight():
    model = tiny_model(3, video_arch="shift-mini")
    d = DF.DeflatedEncoder(model.enc_cfg, model.store)
    assert not d.shift.enabled and d.shift.shift_fraction == model.enc_cfg.shift_fraction
    video = {k: p for k, p in model.store.params.items() if k.startswith("video.")}
    assert set(d.store.params) == set(video)
    for k, p in video.items():
        assert d.store.params[k].data.tobytes() == p.data.tobytes()
    a = d.features(images(2, 4))
    assert a.shape == (2, 6)


def test_conv_deflation_preserves_non_bn_weight_count():
    model = tiny_model(4)
    d = DF.DeflatedEncoder(model.enc_cfg, model.store)
    src = sum(model.store.params[f"video.block{i}.conv.w"].data[0].size for i in range(4))
    assert sum(d.store.params[f"video.block{i}.conv2d.w"].data.size for i in range(4)) == src


# ---------------------------------------------------------------- recalibration

@pytest.fixture(scope="module")
def world_clips():
    from mmv.data import WorldSpec, center_crop, generate

    w = WorldSpec()
    return w, np.stack([center_crop(s.video[:8], 28) for s in generate(w, 5, 32)])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_recalibration_improves_gap_and_freezes_other_weights(seed, world_clips):
    from mmv import tensor as T

    world, clips = world_clips
    model = tiny_model(seed)
    with T.no_record():  # populate BN statistics from real clips, as training would
        for _ in range(20):
            model.video(model.store, clips, "train")
    imgs, _ = DF.calibration_images(world, 64, 100 + seed, 28)
    naive = DF.DeflatedEncoder(model.enc_cfg, model.store)
    rep = DF.recalibrate(model, imgs, DF.DeflationJob(epochs=10, batch_size=16, seed=seed), 8)
    assert rep.naive_gap > 0 and rep.final_gap <= rep.naive_gap
    bn = set(rep.encoder.bn_param_names())
    for k, p in rep.encoder.store.params.items():
        if k not in bn:
            assert p.data.tobytes() == naive.store.params[k].data.tobytes()
    for k, b in rep.encoder.store.buffers.items():
        assert b.tobytes() == naive.store.buffers[k].tobytes()


def test_naive_method_does_not_optimise():
    model = tiny_model(5)
    rep = DF.recalibrate(model, images(10), DF.DeflationJob(method="naive"), 8)
    assert rep.history == [] and rep.final_gap == rep.naive_gap


def test_head_target_option_runs():
    model = tiny_model(6)
    rep = DF.recalibrate(model, images(12), DF.DeflationJob(epochs=2, target="head"), 8)
    assert rep.final_gap <= rep.naive_gap + 1e-6


def test_recalibration_errors_and_defaults():
    model = tiny_model(7)
    with pytest.raises(DataError):
        DF.recalibrate(model, images(1), DF.DeflationJob(), 8)
    with pytest.raises(ValidationError):
        DF.DeflationJob(method="soft")
    job = DF.DeflationJob()
    assert (job.epochs, job.decay_every, job.decay, job.lr) == (100, 30, 0.1, 1e-2)
    lrs = [job.lr * job.decay ** (e // job.decay_every) for e in (29, 30, 60, 90)]
    assert lrs == pytest.approx([1e-2, 1e-3, 1e-4, 1e-5])
    with pytest.raises(ShapeMismatchError):
        DF.static_video(np.zeros((2, 3, 3)), 4)


def test_calibration_images_come_from_a_separate_stream():
    from mmv.data import WorldSpec

    w = WorldSpec()
    imgs, labels = DF.calibration_images(w, 4, DF.DeflationJob().data_seed, 28)
    assert imgs.shape == (4, 28, 28, 3) and labels.shape == (4,)
    other, _ = DF.calibration_images(w, 4, 1_000_003, 28)
    assert not np.array_equal(imgs, other)
