import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mmv import tensor as T
from mmv.errors import (LossNotOnTapeError, LossNotScalarError, NonFiniteError, ShapeMismatchError,
                        UnknownOpError, ValidationError)
from mmv.tensor import GradientTape, Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def grads(f, *xs):
    ts = [leaf(x) for x in xs]
    with GradientTape() as tape:
        out = f(*ts)
    return out, tape.gradient(out, ts)


def test_integer_input_becomes_float64():
    assert Tensor([1, 2, 3]).dtype == np.float64
    assert Tensor(np.zeros(2, np.float32)).dtype == np.float32


def test_add_mul_broadcast_gradients_match_hand_values():
    a = np.arange(6.0).reshape(2, 3)
    b = np.array([1.0, 2.0, 3.0])
    out, (ga, gb) = grads(lambda x, y: T.sum(T.mul(T.add(x, y), y)), a, b)
    assert out.item() == pytest.approx(np.sum((a + b) * b))
    np.testing.assert_allclose(ga, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(gb, (a + 2 * b).sum(axis=0))


def test_div_and_sub():
    out, (ga, gb) = grads(lambda x, y: T.sum(T.div(T.sub(x, y), y)), [4.0, 9.0], [2.0, 3.0])
    np.testing.assert_allclose(ga, [0.5, 1 / 3])
    np.testing.assert_allclose(gb, [-4 / 4, -9 / 9])


def test_relu_subgradient_at_zero_is_zero():
    _, (g,) = grads(lambda x: T.sum(T.relu(x)), [-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_matmul_batched_against_numpy():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5))
    r = rng.standard_normal((2, 3, 5))
    out, (ga, gb) = grads(lambda x, y: T.sum(T.mul(T.matmul(x, y), r)), a, b)
    np.testing.assert_allclose(out.item(), np.sum((a @ b) * r))
    np.testing.assert_allclose(ga, r @ b.T)
    np.testing.assert_allclose(gb, np.einsum("bij,bik->jk", a, r))


def test_logsumexp_stable_for_large_logits():
    x = np.array([[1000.0, 1000.0], [-1000.0, -1001.0]])
    out = T.logsumexp(Tensor(x), axis=1)
    np.testing.assert_allclose(out.data, [1000 + np.log(2), -1000 + np.log1p(np.exp(-1))])


def test_logsumexp_weights_match_direct_formula():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 5))
    w = rng.uniform(0, 2, (3, 5))
    out = T.logsumexp(Tensor(x), axis=1, weights=w)
    np.testing.assert_allclose(out.data, np.log(np.sum(w * np.exp(x), axis=1)))


def test_max_gradient_goes_to_first_argmax():
    _, (g,) = grads(lambda x: T.sum(T.max(x, axis=1)), [[1.0, 3.0, 3.0], [5.0, 0.0, 1.0]])
    np.testing.assert_array_equal(g, [[0, 1, 0], [1, 0, 0]])


def test_getitem_repeated_rows_accumulate():
    _, (g,) = grads(lambda x: T.sum(T.getitem(x, np.array([0, 0, 2]))), np.ones((3, 2)))
    np.testing.assert_array_equal(g, [[2, 2], [0, 0], [1, 1]])


def test_take_rows_accumulates_repeated_ids():
    _, (g,) = grads(lambda t: T.sum(T.take_rows(t, np.array([[1, 1], [3, 1]]))), np.zeros((4, 2)))
    np.testing.assert_array_equal(g[:, 0], [0, 3, 0, 1])


def test_l2_normalize_unit_rows():
    z = T.l2_normalize(Tensor(np.random.default_rng(0).standard_normal((5, 3))))
    np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), 1.0)


def test_unused_parameter_gets_zero_gradient():
    a, b = leaf([1.0, 2.0]), leaf([[3.0]])
    with GradientTape() as tape:
        loss = T.sum(T.square(a))
    ga, gb = tape.gradient(loss, [a, b])
    np.testing.assert_array_equal(ga, [2.0, 4.0])
    np.testing.assert_array_equal(gb, [[0.0]])


def test_mapping_params_return_dict():
    p = {"w": leaf([2.0])}
    with GradientTape() as tape:
        loss = T.sum(T.mul(p["w"], 3.0))
    g = tape.gradient(loss, p)
    assert set(g) == {"w"} and g["w"][0] == 3.0


def test_non_scalar_loss_rejected():
    a = leaf([1.0, 2.0])
    with GradientTape() as tape:
        out = T.mul(a, 2.0)
    with pytest.raises(LossNotScalarError):
        tape.gradient(out, [a])


def test_loss_not_on_tape_rejected():
    a = leaf([1.0])
    loss = T.sum(a)
    with GradientTape() as tape:
        T.sum(a)
    with pytest.raises(LossNotOnTapeError):
        tape.gradient(loss, [a])


def test_non_finite_output_raises():
    with pytest.raises(NonFiniteError):
        T.log(Tensor([0.0]))
    with pytest.raises(NonFiniteError):
        T.exp(Tensor([1000.0]))


def test_shape_mismatch_raises():
    with pytest.raises(ShapeMismatchError):
        T.add(Tensor(np.ones(3)), Tensor(np.ones(4)))
    with pytest.raises(ShapeMismatchError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_forward_op_registry():
    out = T.forward_op("relu", [Tensor([-1.0, 2.0])])
    np.testing.assert_array_equal(out.data, [0.0, 2.0])
    with pytest.raises(UnknownOpError):
        T.forward_op("no-such-op", [])


def test_grad_check_requires_float64():
    with pytest.raises(ValidationError):
        T.grad_check(lambda x: T.sum(x), [Tensor(np.ones(2, np.float32))])


def test_grad_check_detects_wrong_vjp():
    def bad_square(a):
        return T._finish(a.data ** 2, (a,), lambda g: (g * a.data,), "bad_square")

    assert T.grad_check(lambda x: T.sum(bad_square(x)), [Tensor(np.array([1.0, -2.0]))]) > 0.4


def test_no_record_suspends_tape():
    a = leaf([1.0])
    with GradientTape() as tape:
        with T.no_record():
            T.sum(a)
    assert tape.records == []


def test_tape_gradient_is_deterministic():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((8, 8))

    def run():
        t = leaf(x)
        with GradientTape() as tape:
            y = T.sum(T.logsumexp(T.matmul(t, T.transpose(t)), axis=1))
        return tape.gradient(y, [t])[0]

    assert run().tobytes() == run().tobytes()


def test_temporal_shift_moves_channel_groups():
    x = np.arange(2 * 3 * 4, dtype=float).reshape(1, 3, 2, 4)  # [N,T,X,C]
    y = T.temporal_shift(Tensor(x), 1).data
    np.testing.assert_array_equal(y[0, 1:, :, 0], x[0, :-1, :, 0])  # forward in time
    np.testing.assert_array_equal(y[0, 0, :, 0], 0)
    np.testing.assert_array_equal(y[0, :-1, :, 1], x[0, 1:, :, 1])  # backward in time
    np.testing.assert_array_equal(y[0, -1, :, 1], 0)
    np.testing.assert_array_equal(y[..., 2:], x[..., 2:])


def test_conv3d_matches_loop_oracle():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 4, 5, 6, 3))
    w = rng.standard_normal((2, 3, 3, 3, 4))
    b = rng.standard_normal(4)
    pad = ((1, 0), (1, 1), (0, 2))
    out = T.conv3d(Tensor(x), Tensor(w), Tensor(b), (1, 2, 2), pad).data
    xp = np.pad(x, ((0, 0), *pad, (0, 0)))
    to = (xp.shape[1] - 2) // 1 + 1
    ho = (xp.shape[2] - 3) // 2 + 1
    wo = (xp.shape[3] - 3) // 2 + 1
    ref = np.zeros((2, to, ho, wo, 4))
    for n in range(2):
        for t in range(to):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, t: t + 2, 2 * i: 2 * i + 3, 2 * j: 2 * j + 3]
                    ref[n, t, i, j] = np.tensordot(patch, w, axes=4) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_batch_norm_train_and_eval():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 4)) * 3 + 2
    mm, mv = np.zeros(4), np.ones(4)
    y = T.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), mm, mv, training=True).data
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=0), x.var(axis=0) / (x.var(axis=0) + 1e-5))
    np.testing.assert_allclose(mm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(mv, 0.9 + 0.1 * x.var(axis=0))
    ye = T.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), mm, mv, training=False).data
    np.testing.assert_allclose(ye, (x - mm) / np.sqrt(mv + 1e-5))


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=4),
                  elements=st.floats(-3, 3)))
def test_sum_of_squares_gradient_is_twice_input(x):
    _, (g,) = grads(lambda a: T.sum(T.square(a)), x)
    np.testing.assert_allclose(g, 2 * x)


@settings(max_examples=40, deadline=None)
@given(hnp.arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_softmax_rows_from_logsumexp_gradient_sum_to_one(x):
    _, (g,) = grads(lambda a: T.sum(T.logsumexp(a, axis=1)), x)
    np.testing.assert_allclose(g.sum(axis=1), 1.0)
    assert np.all(g >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_transpose_reshape_roundtrip_gradient_identity(seed):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4))
    r = np.random.default_rng(seed + 1).standard_normal((2, 3, 4))
    def roundtrip(a):
        y = T.reshape(T.transpose(a, (1, 0, 2)), (3, 8))
        return T.transpose(T.reshape(y, (3, 2, 4)), (1, 0, 2))

    out, (g,) = grads(lambda a: T.sum(T.mul(roundtrip(a), r)), x)
    np.testing.assert_allclose(out.item(), np.sum(x * r))
    np.testing.assert_allclose(g, r)
