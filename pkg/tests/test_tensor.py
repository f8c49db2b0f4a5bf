import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.integrate import quad

from ecgvit import tensor as T
from ecgvit.errors import ContractError, DimensionError, NonFiniteError, ParameterError
from ecgvit.tensor import Tensor, default_dtype, gradcheck


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True, dtype=np.float64)


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self):
        x = Tensor([[1, 2], [3, 4]])
        assert np.array_equal((Tensor(np.eye(2)) @ x).data, [[1, 2], [3, 4]])

    def test_zero(self, rng):
        out = T.matmul(Tensor(np.zeros((2, 2))), Tensor(rng.normal(size=(2, 5))))
        assert np.all(out.data == 0)

    def test_triple_loop_oracle(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        out = T.matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        assert np.max(np.abs(out.data - triple_loop_matmul(a, b))) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_right_identity_exact(self, rng):
        a = rng.normal(size=(5, 4)).astype(np.float32)
        assert np.array_equal((Tensor(a) @ Tensor(np.eye(4))).data, a)


class TestSoftmax:
    def test_uniform(self):
        assert np.allclose(T.softmax(Tensor([0.0, 0.0, 0.0]), 0).data, 1 / 3, atol=1e-7)

    def test_stabilized(self):
        out = T.softmax(Tensor([1000.0, 0.0]), 0).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-12)

    def test_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = np.exp(x) / np.exp(x).sum()
        with default_dtype(np.float64):
            assert np.max(np.abs(T.softmax(Tensor(x), 0).data - expected)) < 1e-7

    def test_bad_axis(self):
        with pytest.raises(ParameterError):
            T.softmax(Tensor([1.0, 2.0]), axis=3)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
    def test_rows_are_distributions(self, x):
        s = T.softmax(Tensor(x, dtype=np.float64), axis=-1).data
        assert np.all((s >= 0) & (s <= 1))
        assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-6)


class TestLayerNorm:
    def test_constant_row_gives_zero(self):
        out = T.layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        assert np.allclose(out.data, 0.0)

    def test_zero_gain_gives_beta(self, rng):
        beta = rng.normal(size=4)
        out = T.layer_norm(Tensor(rng.normal(size=(3, 4))), Tensor(np.zeros(4)), Tensor(beta))
        assert np.allclose(out.data, np.broadcast_to(beta, (3, 4)), atol=1e-7)

    def test_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        expected = (x - x.mean()) / np.sqrt(x.var() + 1e-6)
        with default_dtype(np.float64):
            out = T.layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-6)
        assert np.max(np.abs(out.data - expected)) < 1e-6

    def test_affine_shape_checked(self):
        with pytest.raises(DimensionError):
            T.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


class TestGelu:
    def test_zero(self):
        assert T.gelu(Tensor([0.0])).data[0] == 0.0

    def test_asymptotes(self):
        out = T.gelu(Tensor([20.0, -20.0]), approximate=False).data
        assert out[0] == pytest.approx(20.0) and abs(out[1]) < 1e-6

    def test_quadrature_oracle(self):
        phi, _ = quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), -np.inf, 1.0)
        with default_dtype(np.float64):
            assert abs(T.gelu(Tensor([1.0])).data[0] - 1.0 * phi) < 1e-4

    def test_tanh_form_close(self):
        x = np.linspace(-4, 4, 41)
        exact = T.gelu(Tensor(x, dtype=np.float64)).data
        approx = T.gelu(Tensor(x, dtype=np.float64), approximate=True).data
        assert np.max(np.abs(exact - approx)) < 1e-3


def sliding_window_oracle(x, w):
    c_out, c_in, k = w.shape
    n = x.shape[1] - k + 1
    out = np.zeros((c_out, n))
    for o in range(c_out):
        for i in range(n):
            out[o, i] = sum(x[c, i + j] * w[o, c, j] for c in range(c_in) for j in range(k))
    return out


class TestConv1d:
    def test_averaging(self):
        out = T.conv1d(Tensor([[3.0, 3, 3, 3]]), Tensor(np.full((1, 1, 3), 1 / 3)))
        assert np.allclose(out.data, [[3.0, 3.0]])

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 7)).astype(np.float32)
        assert np.array_equal(T.conv1d(Tensor(x), Tensor(np.ones((1, 1, 1)))).data, x)

    def test_sliding_window_oracle(self, rng):
        x, w = rng.normal(size=(1, 8)), rng.normal(size=(1, 1, 3))
        out = T.conv1d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64))
        assert out.shape == (1, 6)
        assert np.max(np.abs(out.data - sliding_window_oracle(x, w))) < 1e-6

    def test_no_flip(self):
        out = T.conv1d(Tensor([[1.0, 2.0, 3.0]]), Tensor([[[1.0, 0.0]]]))
        assert np.array_equal(out.data, [[1.0, 2.0]])

    def test_stride_length(self):
        out = T.conv1d(Tensor(np.ones((1, 10))), Tensor(np.ones((1, 1, 3))), stride=3)
        assert out.shape == (1, (10 - 3) // 3 + 1)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            T.conv1d(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 1, 4))))


class TestMaxPool:
    def test_simple(self):
        assert np.array_equal(T.max_pool1d(Tensor([1.0, 2, 3, 4]), 2).data, [2, 4])

    def test_constant(self):
        assert np.array_equal(T.max_pool1d(Tensor(np.full(6, 7.0)), 2).data, np.full(3, 7.0))

    def test_window_oracle(self, rng):
        x = rng.normal(size=10)
        expected = [max(x[i : i + 2]) for i in range(0, 10, 2)]
        assert np.allclose(T.max_pool1d(Tensor(x, dtype=np.float64), 2).data, expected)

    def test_tail_dropped(self):
        assert T.max_pool1d(Tensor(np.arange(7.0)), 2).shape == (3,)

    def test_bad_window(self):
        with pytest.raises(ParameterError):
            T.max_pool1d(Tensor([1.0, 2.0]), 0)


class TestCrossEntropy:
    def test_uniform(self):
        assert T.cross_entropy(Tensor(np.zeros((1, 3))), [1]).item() == pytest.approx(math.log(3), abs=1e-6)

    def test_saturated(self):
        assert T.cross_entropy(Tensor([[1000.0, 0.0, 0.0]]), [0]).item() == pytest.approx(0.0, abs=1e-6)

    def test_direct_formula(self, rng):
        logits = rng.normal(size=(2, 3))
        targets = [2, 0]
        lse = np.log(np.exp(logits).sum(axis=1))
        expected = np.mean(lse - logits[[0, 1], targets])
        got = T.cross_entropy(Tensor(logits, dtype=np.float64), targets).item()
        assert abs(got - expected) < 1e-6

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((1, 3))), [3])


class TestBackward:
    def test_sum(self):
        x = leaf(np.arange(4.0))
        T.tsum(x).backward()
        assert np.array_equal(x.grad, np.ones(4))

    def test_square(self):
        x = leaf([3.0])
        T.tsum(x * x).backward()
        assert x.grad[0] == 6.0

    def test_fan_out_accumulates(self):
        x = leaf([2.0])
        y = x * 3.0
        T.tsum(y * y + y).backward()
        # d/dx (9x^2 + 3x) = 18x + 3
        assert x.grad[0] == pytest.approx(39.0)

    def test_non_scalar(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ContractError):
            T.backward(x * 2.0)

    def test_nonfinite_forward(self):
        with pytest.raises(NonFiniteError):
            T.log(Tensor([0.0]))

    def test_parents_precede_children(self):
        x = leaf([1.0])
        y = T.exp(x)
        z = y * x
        assert x._seq < y._seq < z._seq


def _composite_cases(rng):
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    yield "matmul", (lambda: T.tsum(T.matmul(a, b) * T.matmul(a, b))), [a, b]
    x = leaf(rng.normal(size=(2, 5)))
    w = leaf(rng.normal(size=(2, 5)))
    yield "softmax", (lambda: T.tsum(T.softmax(x, -1) * w)), [x]
    g, be = leaf(rng.normal(size=5)), leaf(rng.normal(size=5))
    yield "layer_norm", (lambda: T.tsum(T.layer_norm(x, g, be) * w)), [x, g, be]
    yield "gelu", (lambda: T.tsum(T.gelu(x) * w)), [x]
    yield "gelu_tanh", (lambda: T.tsum(T.gelu(x, approximate=True) * w)), [x]
    xs = leaf(rng.normal(size=(2, 2, 9)))
    k = leaf(rng.normal(size=(3, 2, 3)))
    bias = leaf(rng.normal(size=3))
    v = leaf(rng.normal(size=(2, 3, 4)))
    yield "conv1d_stride2", (lambda: T.tsum(T.conv1d(xs, k, bias, stride=2) * v)), [xs, k, bias]
    p = leaf(rng.permutation(20).reshape(2, 10) / 7.0)
    u = leaf(rng.normal(size=(2, 5)))
    yield "max_pool1d", (lambda: T.tsum(T.max_pool1d(p, 2) * u)), [p]
    lg = leaf(rng.normal(size=(4, 3)))
    yield "cross_entropy", (lambda: T.cross_entropy(lg, [0, 2, 1, 2])), [lg]
    c = leaf(rng.normal(size=(1, 5)))
    yield "concat_expand_getitem", (
        lambda: T.tsum(T.concat([T.expand(c, (2, 5)), x], axis=0)[1:3] * w)
    ), [c, x]
    yield "div_reshape_transpose", (
        lambda: T.tsum(T.transpose(T.reshape(x / (T.exp(w) + 1.0), (5, 2)), (1, 0)) * w)
    ), [x, w]


def test_gradcheck_every_op(rng):
    with default_dtype(np.float64):
        for name, fn, params in _composite_cases(rng):
            err = gradcheck(fn, params, h=1e-3, rtol=1e-4, floor=1e-6)
            assert err <= 1e-4, name
