"""Tensor engine tests: op oracles, gradient checks, tape behavior."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_gradients, naive_conv2d, rel_err, two_pass_channel_stats

from gancollage.errors import DimensionError, NonFiniteError, ParameterError, UsageError
from gancollage import tensor as T
from gancollage.tensor import Tensor


# ---------------------------------------------------------------------- #
# conv2d
# ---------------------------------------------------------------------- #

class TestConv2d:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((1, 1, 4, 4)))
        k = Tensor(np.ones((1, 1, 1, 1)))
        out = T.conv2d(x, k)
        assert np.array_equal(out.data, x.data)

    def test_sum_kernel(self):
        x = Tensor(np.full((1, 1, 3, 3), 2.0))
        k = Tensor(np.ones((1, 1, 3, 3)))
        out = T.conv2d(x, k)
        assert out.shape == (1, 1, 1, 1)
        assert out.item() == pytest.approx(18.0, abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        expected = naive_conv2d(x, w)
        out = T.conv2d(Tensor(x), Tensor(w))
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 0), (2, 1), (3, 2)])
    def test_stride_pad_against_oracle(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((2, 2, 9, 9))
        w = rng.standard_normal((3, 2, 3, 3))
        expected = naive_conv2d(x, w, stride=stride, pad=pad)
        out = T.conv2d(Tensor(x), Tensor(w), stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_bias(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), pad=1)
        expected = naive_conv2d(x, w, pad=1) + b[None, :, None, None]
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_channel_mismatch_raises(self):
        with pytest.raises(DimensionError):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal(3), requires_grad=True)
        check_gradients(
            lambda: (T.conv2d(x, w, b, stride=2, pad=1) * Tensor(_probe(rng, (2, 3, 3, 3)))).sum(),
            [x, w, b], rng)


_PROBES = {}


def _probe(rng, shape):
    # fixed random projection so the scalar output exercises all coordinates
    if shape not in _PROBES:
        _PROBES[shape] = np.random.default_rng(99).standard_normal(shape)
    return _PROBES[shape]


# ---------------------------------------------------------------------- #
# resampling ops
# ---------------------------------------------------------------------- #

class TestUpsample:
    def test_replication(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = T.upsample_nearest(x, 2)
        expected = np.array([
            [1, 1, 2, 2],
            [1, 1, 2, 2],
            [3, 3, 4, 4],
            [3, 3, 4, 4],
        ], dtype=float)
        assert np.array_equal(out.data, expected)

    def test_factor_one_identity(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 3, 4, 4)))
        assert np.array_equal(T.upsample_nearest(x, 1).data, x.data)

    def test_gradient_counts_replicas(self):
        x = Tensor(np.zeros((2, 2)), requires_grad=True)
        T.upsample_nearest(x, 2).sum().backward()
        assert np.array_equal(x.grad, np.full((2, 2), 4.0))

    def test_bad_factor(self):
        with pytest.raises(ParameterError):
            T.upsample_nearest(Tensor(np.zeros((2, 2))), 0)

    def test_downsample_picks_corners(self):
        x = np.arange(16.0).reshape(1, 1, 4, 4)
        out = T.downsample_nearest(Tensor(x), 2)
        assert np.array_equal(out.data, x[:, :, ::2, ::2])

    def test_avg_pool_matches_block_mean(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 3, 8, 8))
        out = T.avg_pool2d(Tensor(x), 2)
        expected = x.reshape(2, 3, 4, 2, 4, 2).mean(axis=(3, 5))
        np.testing.assert_allclose(out.data, expected, atol=1e-14)


class TestShift2d:
    def test_shift_right_two(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 1, 4, 4))
        out = T.shift2d(Tensor(x), 0, 2).data
        assert np.all(out[..., :2] == 0)
        assert np.array_equal(out[..., 2:], x[..., :2])

    def test_round_trip_inside(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 1, 6, 6))
        back = T.shift2d(T.shift2d(Tensor(x), 2, -1), -2, 1).data
        # interior survives, border cells were zero-filled
        assert np.array_equal(back[:, :, 0:4, 1:6], x[:, :, 0:4, 1:6])
        assert np.all(back[:, :, 4:, :] == 0)

    def test_gradient_is_reverse_shift(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((1, 1, 5, 5)), requires_grad=True)
        check_gradients(
            lambda: (T.shift2d(x, 1, -2) * Tensor(_probe(rng, (1, 1, 5, 5)))).sum(),
            [x], rng)


# ---------------------------------------------------------------------- #
# batch statistics
# ---------------------------------------------------------------------- #

class TestBatchStats:
    def test_constant(self):
        m, v = T.batch_stats(Tensor(np.full((2, 3, 4, 4), 5.0)))
        np.testing.assert_allclose(m.data, 5.0)
        np.testing.assert_allclose(v.data, 0.0, atol=1e-15)

    def test_two_point(self):
        x = np.zeros((2, 1, 1, 1))
        x[0, 0, 0, 0], x[1, 0, 0, 0] = 1.0, 3.0
        m, v = T.batch_stats(Tensor(x))
        assert m.data[0] == pytest.approx(2.0)
        assert v.data[0] == pytest.approx(1.0)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 3, 5, 5)) * 2.5 + 1.0
        m, v = T.batch_stats(Tensor(x))
        em, ev = two_pass_channel_stats(x)
        np.testing.assert_allclose(m.data, em, rtol=1e-12)
        np.testing.assert_allclose(v.data, ev, rtol=1e-12)

    def test_gradients(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((3, 2, 4, 4)), requires_grad=True)

        def build():
            m, v = T.batch_stats(x)
            return (m * Tensor([0.7, -1.3])).sum() + (v * Tensor([0.4, 2.0])).sum()

        check_gradients(build, [x], rng)


# ---------------------------------------------------------------------- #
# backward contract
# ---------------------------------------------------------------------- #

class TestBackward:
    def test_square(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_relu_sum(self):
        x = Tensor(np.array([-1.0, 2.0]), requires_grad=True)
        T.relu(x).sum().backward()
        assert np.array_equal(x.grad, np.array([0.0, 1.0]))

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(UsageError):
            (x * 2.0).backward()

    def test_accumulation_linearity(self):
        rng = np.random.default_rng(11)
        data = rng.standard_normal(6)
        w = Tensor(np.array(1.7))

        def f1(x):
            return (x * x).sum()

        def f2(x):
            return (T.tanh(x) * w).sum()

        xa = Tensor(data.copy(), requires_grad=True)
        f1(xa).backward()
        f2(xa).backward()
        xb = Tensor(data.copy(), requires_grad=True)
        (f1(xb) + f2(xb)).backward()
        np.testing.assert_allclose(xa.grad, xb.grad, rtol=1e-14)

    def test_forward_determinism(self):
        rng = np.random.default_rng(12)
        x = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)

        def run():
            return T.tanh(x @ w).sum().item()

        assert run() == run()

    def test_diamond_graph_grad(self):
        # y = a*b + a: gradient wrt a must gather both paths
        a = Tensor(np.array(2.0), requires_grad=True)
        b = Tensor(np.array(5.0), requires_grad=True)
        (a * b + a).backward()
        assert a.grad == pytest.approx(6.0)
        assert b.grad == pytest.approx(2.0)


# ---------------------------------------------------------------------- #
# per-primitive gradient checks
# ---------------------------------------------------------------------- #

class TestPrimitiveGradients:
    @pytest.mark.parametrize("name", [
        "add", "sub", "mul", "div", "power", "relu", "prelu", "tanh",
        "mean", "sum", "dot", "l2_norm", "linear", "matmul",
        "upsample", "downsample", "avg_pool", "gap", "gather",
    ])
    def test_primitive(self, name):
        rng = np.random.default_rng(hash(name) % 2 ** 31)
        build, leaves = _primitive_case(name, rng)
        check_gradients(build, leaves, rng)


def _primitive_case(name, rng):
    def randt(*shape, shift=0.0):
        return Tensor(rng.standard_normal(shape) + shift, requires_grad=True)

    if name == "add":
        a, b = randt(3, 4), randt(4)
        return lambda: ((a + b) * Tensor(_probe(rng, (3, 4)))).sum(), [a, b]
    if name == "sub":
        a, b = randt(3, 4), randt(3, 1)
        return lambda: ((a - b) * Tensor(_probe(rng, (3, 4)))).sum(), [a, b]
    if name == "mul":
        a, b = randt(2, 5), randt(2, 5)
        return lambda: (a * b).sum(), [a, b]
    if name == "div":
        a, b = randt(2, 5), Tensor(rng.standard_normal((2, 5)) + 3.0, requires_grad=True)
        return lambda: (a / b).sum(), [a, b]
    if name == "power":
        a = Tensor(rng.uniform(0.5, 2.0, (3, 3)), requires_grad=True)
        return lambda: (a ** 1.7).sum(), [a]
    if name == "relu":
        a = Tensor(rng.standard_normal(40) + 0.05, requires_grad=True)
        return lambda: (T.relu(a) * Tensor(_probe(rng, (40,)))).sum(), [a]
    if name == "prelu":
        a = randt(30)
        s = Tensor(np.array(0.3), requires_grad=True)
        return lambda: (T.prelu(a, s) * Tensor(_probe(rng, (30,)))).sum(), [a, s]
    if name == "tanh":
        a = randt(4, 4)
        return lambda: (T.tanh(a) * Tensor(_probe(rng, (4, 4)))).sum(), [a]
    if name == "mean":
        a = randt(3, 4, 5)
        return lambda: (a.mean(axis=(0, 2)) * Tensor(_probe(rng, (4,)))).sum(), [a]
    if name == "sum":
        a = randt(3, 4, 5)
        return lambda: (a.sum(axis=1, keepdims=True) * Tensor(_probe(rng, (3, 1, 5)))).sum(), [a]
    if name == "dot":
        a, b = randt(7), randt(7)
        return lambda: T.dot(a, b), [a, b]
    if name == "l2_norm":
        a = Tensor(rng.standard_normal(9) + 0.3, requires_grad=True)
        return lambda: T.l2_norm(a) * Tensor(np.array(1.3)), [a]
    if name == "linear":
        x, w, b = randt(4, 6), randt(3, 6), randt(3)
        return lambda: (T.linear(x, w, b) * Tensor(_probe(rng, (4, 3)))).sum(), [x, w, b]
    if name == "matmul":
        a, b = randt(3, 4), randt(4, 2)
        return lambda: ((a @ b) * Tensor(_probe(rng, (3, 2)))).sum(), [a, b]
    if name == "upsample":
        a = randt(1, 2, 3, 3)
        return lambda: (T.upsample_nearest(a, 2) * Tensor(_probe(rng, (1, 2, 6, 6)))).sum(), [a]
    if name == "downsample":
        a = randt(1, 2, 6, 6)
        return lambda: (T.downsample_nearest(a, 3) * Tensor(_probe(rng, (1, 2, 2, 2)))).sum(), [a]
    if name == "avg_pool":
        a = randt(2, 2, 4, 4)
        return lambda: (T.avg_pool2d(a, 2) * Tensor(_probe(rng, (2, 2, 2, 2)))).sum(), [a]
    if name == "gap":
        a = randt(2, 3, 4, 4)
        return lambda: (T.global_avg_pool(a) * Tensor(_probe(rng, (2, 3)))).sum(), [a]
    if name == "gather":
        t = randt(5, 4)
        idx = np.array([0, 3, 3, 1])
        return lambda: (T.gather_rows(t, idx) * Tensor(_probe(rng, (4, 4)))).sum(), [t]
    raise AssertionError(name)


# ---------------------------------------------------------------------- #
# error contracts
# ---------------------------------------------------------------------- #

class TestNumericGuards:
    def test_divide_by_zero_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.ones(3)) / Tensor(np.zeros(3))

    def test_sqrt_of_negative_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([-1.0])) ** 0.5

    def test_nan_construction_raises(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([np.nan]))

    def test_gather_bad_index(self):
        with pytest.raises(ParameterError):
            T.gather_rows(Tensor(np.ones((2, 2))), [5])


# ---------------------------------------------------------------------- #
# algebraic properties
# ---------------------------------------------------------------------- #

@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2 ** 31 - 1))
def test_upsample_then_downsample_roundtrip(h, f, seed):
    x = np.random.default_rng(seed).standard_normal((h, h))
    up = T.upsample_nearest(Tensor(x), f)
    down = T.downsample_nearest(up, f)
    assert np.array_equal(down.data, x)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sum_of_parts_equals_sum(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 5)))
    total = x.sum().item()
    by_axis = x.sum(axis=0).sum().item()
    assert rel_err(total, by_axis, floor=1e-12) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(-3, 3), st.integers(-3, 3))
def test_shift_matches_index_oracle(seed, dy, dx):
    x = np.random.default_rng(seed).standard_normal((2, 6, 6))
    out = T.shift2d(Tensor(x), dy, dx).data
    expected = np.zeros_like(x)
    for r in range(6):
        for c in range(6):
            sr, sc = r - dy, c - dx
            if 0 <= sr < 6 and 0 <= sc < 6:
                expected[:, r, c] = x[:, sr, sc]
    assert np.array_equal(out, expected)
