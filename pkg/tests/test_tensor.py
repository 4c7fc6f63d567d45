import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lfmdepth import tensor as T
from lfmdepth.tensor import ContractError, ShapeError, Tensor

from .conftest import gradcheck, leaf, weighted_sum


def check_unary(op, rng, shape=(3, 4), positive=False):
    x = leaf(rng, shape, positive=positive)
    gradcheck(lambda: weighted_sum(op(x), rng_copy(rng)), [x], rng)


def rng_copy(rng):
    # the weights used inside weighted_sum must not change between calls
    return np.random.default_rng(7)


@pytest.mark.parametrize("op", [T.neg, T.square, T.exp, T.sigmoid, T.silu,
                                lambda a: T.power(a, 3.0), lambda a: T.softmax(a, axis=1),
                                lambda a: T.softmax(a, axis=0)])
def test_unary_gradients(op, rng):
    check_unary(op, rng)


@pytest.mark.parametrize("op", [T.log, T.sqrt, lambda a: T.power(a, 0.5)])
def test_positive_domain_gradients(op, rng):
    check_unary(op, rng, positive=True)


def test_relu_gradient_away_from_kink(rng):
    x = leaf(rng, (4, 5))
    x.data[np.abs(x.data) < 0.05] = 0.3
    gradcheck(lambda: weighted_sum(T.relu(x), rng_copy(rng)), [x], rng)


@pytest.mark.parametrize("op", [T.add, T.sub, T.mul, T.div])
def test_binary_broadcast_gradients(op, rng):
    a = leaf(rng, (2, 3, 4))
    b = leaf(rng, (3, 1), positive=True)
    gradcheck(lambda: weighted_sum(op(a, b), rng_copy(rng)), [a, b], rng)


@pytest.mark.parametrize("reduce", [
    lambda a: T.tsum(a), lambda a: T.tsum(a, axis=1), lambda a: T.mean(a, axis=(0, 2), keepdims=True),
    lambda a: T.mean(a), lambda a: T.variance(a), lambda a: T.variance(a, axis=-1)])
def test_reduction_gradients(reduce, rng):
    x = leaf(rng, (2, 3, 4))
    gradcheck(lambda: weighted_sum(reduce(x), rng_copy(rng)), [x], rng)


def test_shape_op_gradients(rng):
    a = leaf(rng, (2, 3, 4))
    b = leaf(rng, (2, 2, 4))
    idx = np.array([2, 0, 0, 1])

    def fn():
        x = T.concat([a, b], axis=1)                     # 2, 5, 4
        x = T.transpose(T.reshape(x, (2, 4, 5)), (2, 0, 1))
        return weighted_sum(T.take(x, idx, axis=0), rng_copy(rng))
    gradcheck(fn, [a, b], rng, samples=10)


def test_matmul_and_linear_gradients(rng):
    a = leaf(rng, (2, 3, 4))
    b = leaf(rng, (4, 5))
    w = leaf(rng, (6, 5))
    bias = leaf(rng, (6,))
    gradcheck(lambda: weighted_sum(T.linear(T.matmul(a, b), w, bias), rng_copy(rng)), [a, b, w, bias], rng)


@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (1, 1), (5, 1)])
def test_conv2d_gradients(k, stride, rng):
    x = leaf(rng, (2, 3, 6, 6))
    w = leaf(rng, (4, 3, k, k), 0.3)
    b = leaf(rng, (4,))
    gradcheck(lambda: weighted_sum(T.conv2d(x, w, b, stride=stride), rng_copy(rng)), [x, w, b], rng)


def test_depthwise_conv_gradients(rng):
    x = leaf(rng, (2, 3, 5, 5))
    w = leaf(rng, (3, 3, 3))
    b = leaf(rng, (3,))
    gradcheck(lambda: weighted_sum(T.depthwise_conv2d(x, w, b), rng_copy(rng)), [x, w, b], rng)


def test_pool_and_upsample_gradients(rng):
    x = leaf(rng, (2, 2, 4, 4))
    gradcheck(lambda: weighted_sum(T.avg_pool2d(x, 2), rng_copy(rng)), [x], rng)
    gradcheck(lambda: weighted_sum(T.max_pool2d(x, 2), rng_copy(rng)), [x], rng)
    gradcheck(lambda: weighted_sum(T.upsample_nearest2d(x, 2), rng_copy(rng)), [x], rng)


def test_self_attention_gradients(rng):
    c = 8
    x = leaf(rng, (2, c, 3, 3))
    ps = [leaf(rng, (c, c), 0.3) if i % 2 == 0 else leaf(rng, (c,), 0.1) for i in range(8)]
    gradcheck(lambda: weighted_sum(T.self_attention(x, *ps, heads=4), rng_copy(rng)), [x] + ps, rng)


def test_spectral_chain_gradients(rng):
    x = leaf(rng, (2, 3, 4, 6))
    mask = leaf(rng, (4, 4))

    def fn():
        amp, phase = T.magphase(T.rfft2(x))
        return weighted_sum(T.irfft2(T.polar(amp * mask, phase, 6)), rng_copy(rng))
    gradcheck(fn, [x, mask], rng, samples=10)


def test_irfft2_odd_width_gradient(rng):
    re = leaf(rng, (1, 3, 3))
    im = leaf(rng, (1, 3, 3))
    gradcheck(lambda: weighted_sum(T.irfft2(T.ComplexSpectrum(re, im, 5)), rng_copy(rng)), [re, im], rng)


def test_magphase_zero_bin_has_zero_phase_and_gradient():
    re = Tensor(np.array([[[0.0, 3.0]]]), requires_grad=True)
    im = Tensor(np.array([[[0.0, 4.0]]]), requires_grad=True)
    amp, phase = T.magphase(T.ComplexSpectrum(re, im, 2))
    assert amp.data[0, 0, 0] == 0 and phase.data[0, 0, 0] == 0
    assert amp.data[0, 0, 1] == 5.0
    T.backward(T.tsum(amp) + T.tsum(phase))
    assert re.grad[0, 0, 0] == 0 and im.grad[0, 0, 0] == 0


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array(3.0), requires_grad=True)
    T.backward(x * x + x)
    assert x.grad == pytest.approx(7.0)


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        T.backward(x * 2.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_deep_chain_does_not_recurse():
    x = Tensor(np.array(1.0), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    T.backward(y)
    assert x.grad == 1.0


def test_shape_errors():
    with pytest.raises(ShapeError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((3, 5, 3, 3))))
    with pytest.raises(ShapeError):
        T.avg_pool2d(Tensor(np.ones((1, 1, 5, 5))), 2)


def test_numpy_operand_stays_tensor():
    out = np.ones(3) + Tensor(np.ones(3))
    assert isinstance(out, Tensor)


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), stride=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5)),
                  elements=st.floats(-20, 20)))
def test_softmax_rows_sum_to_one(a):
    out = T.softmax(Tensor(a), axis=-1).data
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)
    assert np.all(out >= 0)
