import numpy as np
import pytest

from mmv import nn
from mmv import tensor as T
from mmv.errors import ShapeMismatchError, ValidationError
from mmv.nn import BatchNormParams, Conv3dFilter, ShiftConfig
from mmv.tensor import Tensor

rng = np.random.default_rng(0)


def test_identity_filter_returns_input():
    x = rng.standard_normal((2, 3, 4, 4, 3))
    w = np.zeros((1, 1, 1, 3, 3))
    w[0, 0, 0] = np.eye(3)
    y = nn.conv3d(Tensor(x), Conv3dFilter(Tensor(w)))
    np.testing.assert_array_equal(y.data, x)


def test_constant_in_time_stays_constant_with_valid_padding():
    frame = rng.standard_normal((1, 1, 5, 5, 2))
    x = np.repeat(frame, 6, axis=1)
    f = Conv3dFilter(Tensor(rng.standard_normal((3, 3, 3, 2, 4))), temporal_padding="valid")
    y = nn.conv3d(Tensor(x), f).data
    assert y.shape[1] == 4
    np.testing.assert_allclose(y, np.broadcast_to(y[:, :1], y.shape), atol=1e-12)


def test_conv3d_2x2x2_matches_six_loop_oracle():
    x = rng.standard_normal((1, 4, 4, 4, 2))
    w = rng.standard_normal((2, 2, 2, 2, 3))
    y = nn.conv3d(Tensor(x), Conv3dFilter(Tensor(w), temporal_padding="valid",
                                          spatial_padding="valid")).data
    ref = np.zeros((1, 3, 3, 3, 3))
    for t in range(3):
        for h in range(3):
            for v in range(3):
                for o in range(3):
                    s = 0.0
                    for a in range(2):
                        for b in range(2):
                            for c in range(2):
                                for i in range(2):
                                    s += x[0, t + a, h + b, v + c, i] * w[a, b, c, i, o]
                    ref[0, t, h, v, o] = s
    np.testing.assert_allclose(y, ref, atol=1e-6)


def test_kt1_conv3d_equals_per_frame_conv2d():
    x = rng.standard_normal((2, 3, 6, 6, 2))
    w = rng.standard_normal((3, 3, 2, 4))
    b = rng.standard_normal(4)
    y3 = nn.conv3d(Tensor(x), Conv3dFilter(Tensor(w[None]), Tensor(b), strides=(1, 2, 2))).data
    for t in range(3):
        y2 = nn.conv2d(Tensor(x[:, t]), Tensor(w), Tensor(b), stride=2).data
        np.testing.assert_allclose(y3[:, t], y2, atol=1e-6)


def test_conv_filter_validation():
    with pytest.raises(ShapeMismatchError):
        Conv3dFilter(Tensor(np.zeros((3, 3, 2, 2))))
    with pytest.raises(ShapeMismatchError):
        Conv3dFilter(Tensor(np.zeros((0, 3, 3, 2, 2))))
    with pytest.raises(ValidationError):
        Conv3dFilter(Tensor(np.zeros((1, 3, 3, 2, 2))), temporal_padding="reflect")
    with pytest.raises(ShapeMismatchError):
        nn.conv3d(Tensor(np.zeros((1, 2, 4, 4, 3))), Conv3dFilter(Tensor(np.zeros((1, 1, 1, 2, 2)))))


def test_disabled_shift_is_exact_identity():
    x = Tensor(rng.standard_normal((1, 4, 2, 2, 16)))
    assert nn.temporal_shift(x, ShiftConfig(enabled=False)) is x


def test_shift_on_single_frame_zeroes_shifted_groups():
    x = rng.standard_normal((1, 1, 2, 2, 16)) + 5
    y = nn.temporal_shift(Tensor(x), ShiftConfig(0.125)).data
    np.testing.assert_array_equal(y[..., :4], 0)
    np.testing.assert_array_equal(y[..., 4:], x[..., 4:])


def test_shift_constant_in_time_interior_unchanged():
    frame = rng.standard_normal((1, 1, 2, 2, 10))
    x = np.repeat(frame, 3, axis=1)
    y = nn.temporal_shift(Tensor(x), ShiftConfig(0.2)).data  # fold = 2 channels per group
    np.testing.assert_array_equal(y[:, 1], x[:, 1])
    np.testing.assert_array_equal(y[:, 0, ..., 2:4], x[:, 0, ..., 2:4])
    np.testing.assert_array_equal(y[:, 0, ..., :2], 0)
    np.testing.assert_array_equal(y[:, 2, ..., :2], x[:, 2, ..., :2])
    np.testing.assert_array_equal(y[:, 2, ..., 2:4], 0)
    np.testing.assert_array_equal(y[..., 4:], x[..., 4:])


def test_shift_remainder_channels_unshifted_and_errors():
    assert ShiftConfig(0.125).fold(10) == 1
    with pytest.raises(ValidationError):
        ShiftConfig(0.9)
    with pytest.raises(ShapeMismatchError):
        nn.temporal_shift(Tensor(np.zeros((1, 0, 2, 2, 8))), ShiftConfig())


def _bn(c, **kw):
    return BatchNormParams(Tensor(np.ones(c)), Tensor(np.zeros(c)), np.zeros(c), np.ones(c), **kw)


def test_bn_eval_identity_stats_divides_by_sqrt_one_plus_eps():
    x = rng.standard_normal((4, 3))
    y = nn.batch_norm(Tensor(x), _bn(3), mode="eval").data
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-5))


def test_bn_train_output_mean_beta_std_gamma():
    x = rng.standard_normal((2, 3, 4, 4, 5)) * 4 - 1
    p = _bn(5)
    p.gamma = Tensor(np.array([1.0, -2.0, 0.5, 3.0, 1.5]))
    p.beta = Tensor(np.arange(5.0))
    y = nn.batch_norm(Tensor(x), p).data.reshape(-1, 5)
    np.testing.assert_allclose(y.mean(0), np.arange(5.0), atol=1e-4)
    np.testing.assert_allclose(y.std(0), np.abs(p.gamma.data), atol=1e-4)


def test_bn_moving_stats_follow_scalar_recurrence():
    p = _bn(2)
    x1, x2 = rng.standard_normal((8, 2)) + 3, rng.standard_normal((8, 2)) - 1
    nn.batch_norm(Tensor(x1), p)
    nn.batch_norm(Tensor(x2), p)
    m1 = 0.9 * 0 + 0.1 * x1.mean(0)
    np.testing.assert_allclose(p.moving_mean, 0.9 * m1 + 0.1 * x2.mean(0))
    v1 = 0.9 * 1 + 0.1 * x1.var(0)
    np.testing.assert_allclose(p.moving_var, 0.9 * v1 + 0.1 * x2.var(0))
    assert np.all(p.moving_var >= 0)


def test_bn_eval_is_batch_independent():
    p = _bn(3)
    p.moving_mean[:] = [1, 2, 3]
    p.moving_var[:] = [4, 5, 6]
    x = rng.standard_normal((5, 3))
    full = nn.batch_norm(Tensor(x), p, mode="eval").data
    one = nn.batch_norm(Tensor(x[2:3]), p, mode="eval").data
    np.testing.assert_array_equal(full[2:3], one)


def test_bn_errors():
    with pytest.raises(ValidationError):
        nn.batch_norm(Tensor(np.ones((2, 3))), _bn(3), mode="test")
    with pytest.raises(ShapeMismatchError):
        nn.batch_norm(Tensor(np.ones((0, 3))), _bn(3))
    with pytest.raises(ShapeMismatchError):
        nn.batch_norm(Tensor(np.ones((2, 4))), _bn(3))


def test_pool_constant_and_shapes():
    x = Tensor(np.full((2, 3, 4, 5, 6), 2.5))
    y = nn.pool(x, "spatiotemporal-avg")
    assert y.shape == (2, 6)
    np.testing.assert_allclose(y.data, 2.5)
    assert nn.pool(x, "spatial-avg").shape == (2, 3, 6)
    assert nn.pool(x, "temporal-avg").shape == (2, 4, 5, 6)


def test_max_over_words_matches_loop_oracle():
    x = rng.standard_normal((3, 16, 7))
    y = nn.pool(Tensor(x), "max-over-axis", axis=1).data
    for n in range(3):
        for c in range(7):
            best = x[n, 0, c]
            for k in range(1, 16):
                best = x[n, k, c] if x[n, k, c] > best else best
            assert y[n, c] == best


def test_pool_errors():
    with pytest.raises(ValidationError):
        nn.pool(Tensor(np.ones((1, 2, 2, 2, 1))), "median")
    with pytest.raises(ValidationError):
        nn.pool(Tensor(np.ones((1, 2, 3))), "max-over-axis")
    with pytest.raises(ShapeMismatchError):
        nn.pool(Tensor(np.ones((1, 0, 2, 2, 1))), "temporal-avg")


def test_linear_and_param_store():
    s = nn.ParamStore()
    w = s.add_param("w", np.eye(3))
    with pytest.raises(ValidationError):
        s.add_param("w", np.eye(3))
    x = rng.standard_normal((2, 3))
    np.testing.assert_allclose(nn.linear(Tensor(x), w, Tensor(np.ones(3))).data, x + 1)
    s.add_bn("bn", 4)
    c = s.astype(np.float32)
    assert c.params["bn.gamma"].dtype == np.float32 and c.buffers["bn.moving_var"].dtype == np.float32
    d = s.copy()
    d.params["w"].data[0, 0] = 9
    assert s.params["w"].data[0, 0] == 1


def test_nn_ops_pass_grad_check():
    x = Tensor(rng.standard_normal((2, 3, 4, 4, 2)))
    w = Tensor(rng.standard_normal((3, 3, 3, 2, 2)) * 0.3)
    b = Tensor(rng.standard_normal(2))
    f = lambda x_, w_, b_: T.sum(T.square(nn.pool(nn.temporal_shift(
        nn.conv3d(x_, Conv3dFilter(w_, b_, strides=(1, 2, 2))), ShiftConfig(0.5)), "spatial-avg")))
    assert T.grad_check(f, [x, w, b]) < 1e-4
