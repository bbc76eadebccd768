import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcan import tensor as T

from conftest import numeric_grad, rel_err


def triple_loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


class TestMatmul:
    def test_identity(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((a @ T.Tensor(np.eye(2))).data, a.data)

    def test_row_times_column(self):
        out = T.Tensor([[1.0, 1.0]]) @ T.Tensor([[2.0], [3.0]])
        assert out.data.tolist() == [[5.0]]

    def test_matches_triple_loop(self, rng):
        a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
        out = (T.Tensor(a) @ T.Tensor(b)).data
        assert np.max(np.abs(out - triple_loop_matmul(a, b))) <= 1e-12

    def test_shape_error(self):
        with pytest.raises(T.ShapeError):
            T.Tensor(np.ones((2, 3))) @ T.Tensor(np.ones((2, 3)))

    def test_identity_and_transpose_contracts(self, rng):
        a, b = rng.normal(size=(4, 6)), rng.normal(size=(6, 3))
        ta, tb = T.Tensor(a), T.Tensor(b)
        assert np.max(np.abs((T.Tensor(np.eye(4)) @ ta).data - a)) <= 1e-12
        lhs = T.transpose(ta @ tb).data
        rhs = (T.transpose(tb) @ T.transpose(ta)).data
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_associativity(self, rng):
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(5, 2))
        ta, tb, tc = map(T.Tensor, (a, b, c))
        assert np.max(np.abs(((ta @ tb) @ tc).data - (ta @ (tb @ tc)).data)) <= 1e-12


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax_rows(T.Tensor([[0.0, 0.0, 0.0]])).data
        assert np.allclose(out, 1 / 3, atol=1e-15)

    def test_closed_form(self):
        out = T.softmax_rows(T.Tensor([[0.0, np.log(2.0)]])).data
        assert np.allclose(out, [[1 / 3, 2 / 3]], atol=1e-15)

    def test_large_logits_against_extended_precision(self):
        out = T.softmax_rows(T.Tensor([[1000.0, 0.0]])).data[0]
        mpmath.mp.dps = 50
        z = mpmath.exp(1000) + mpmath.exp(0)
        expected = [float(mpmath.exp(1000) / z), float(mpmath.exp(0) / z)]
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(expected[0], abs=1e-15)
        assert out[1] == pytest.approx(expected[1], abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)),
                  elements=st.floats(-1e3, 1e3)))
    def test_rows_sum_to_one(self, x):
        out = T.softmax_rows(T.Tensor(x)).data
        assert np.all(out >= 0)
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12

    def test_masked_entries_get_zero(self):
        out = T.softmax_rows(T.Tensor([[1.0, 2.0, 3.0]]), np.array([True, False, True])).data
        assert out[0, 1] == 0.0
        assert out.sum() == pytest.approx(1.0, abs=1e-15)

    def test_fully_masked_row_raises(self):
        with pytest.raises(T.ShapeError):
            T.softmax_rows(T.Tensor([[1.0, 2.0]]), np.array([False, False]))


class TestLayerNorm:
    def ones(self, d):
        return T.Tensor(np.ones(d)), T.Tensor(np.zeros(d))

    def test_constant_row(self):
        g, b = self.ones(4)
        assert np.array_equal(T.layer_norm(T.Tensor(np.full((1, 4), 7.0)), g, b, 1e-5).data, np.zeros((1, 4)))

    def test_closed_form(self):
        g, b = self.ones(2)
        out = T.layer_norm(T.Tensor([[1.0, 3.0]]), g, b, 1e-14).data
        assert np.allclose(out, [[-1.0, 1.0]], atol=1e-10)

    def test_random_rows_standardised(self, rng):
        g, b = self.ones(8)
        out = T.layer_norm(T.Tensor(rng.normal(size=(4, 8)) * 5 + 3), g, b, 0.0).data
        assert np.max(np.abs(out.mean(axis=1))) <= 1e-10
        assert np.max(np.abs(out.var(axis=1) - 1.0)) <= 1e-10

    def test_affine(self, rng):
        x = rng.normal(size=(3, 5))
        gamma, beta = rng.normal(size=5), rng.normal(size=5)
        out = T.layer_norm(T.Tensor(x), T.Tensor(gamma), T.Tensor(beta), 1e-5).data
        xhat = (x - x.mean(1, keepdims=True)) / np.sqrt(x.var(1, keepdims=True) + 1e-5)
        assert np.allclose(out, xhat * gamma + beta, atol=1e-12)


class TestSvd:
    def test_diagonal(self):
        res = T.svd(T.Tensor(np.diag([3.0, 1.0])))
        assert np.allclose(res.s.data, [3.0, 1.0], atol=1e-14)

    def test_rank_one(self, rng):
        u = rng.normal(size=4)
        v = rng.normal(size=3)
        x = 5.0 * np.outer(u / np.linalg.norm(u), v / np.linalg.norm(v))
        s = T.svd(T.Tensor(x)).s.data
        assert s[0] == pytest.approx(5.0, abs=1e-12)
        assert np.all(np.abs(s[1:]) <= 1e-12)

    def test_matches_gram_eigenvalues(self, rng):
        x = rng.normal(size=(6, 4))
        s = T.svd(T.Tensor(x)).s.data
        eig = np.sort(np.linalg.eigvalsh(x.T @ x))[::-1]
        assert np.max(np.abs(s - np.sqrt(np.clip(eig, 0, None)))) <= 1e-8

    def test_sign_convention_and_determinism(self, rng):
        x = rng.normal(size=(5, 7))
        a, b = T.svd(T.Tensor(x)), T.svd(T.Tensor(x.copy()))
        assert np.array_equal(a.u.data, b.u.data) and np.array_equal(a.vt.data, b.vt.data)
        for col in a.u.data.T:
            first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
            assert first >= 0

    def test_non_finite_input(self):
        with pytest.raises(T.NumericError):
            T.svd_array(np.array([[np.nan, 1.0], [0.0, 1.0]]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**31 - 1))
    def test_invariants_random(self, m, n, seed):
        x = np.random.default_rng(seed).normal(size=(m, n))
        u, s, vt = T.svd_array(x)
        h = min(m, n)
        assert u.shape == (m, h) and s.shape == (h,) and vt.shape == (h, n)
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert np.linalg.norm(u * s @ vt - x) / np.linalg.norm(x) <= 1e-10
        assert np.max(np.abs(u.T @ u - np.eye(h))) <= 1e-8
        assert np.max(np.abs(vt @ vt.T - np.eye(h))) <= 1e-8


class TestBackward:
    def test_square(self):
        x = T.Tensor(3.0, requires_grad=True)
        T.backward(T.square(x))
        assert x.grad == pytest.approx(6.0)

    def test_matmul_softmax_sum_chain(self, rng):
        a = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        w = rng.normal(size=(3, 3))

        def f():
            return T.sum_all(T.mul(T.softmax_rows(a @ b), T.Tensor(w)))

        T.backward(f())
        with T.no_grad():
            na = numeric_grad(lambda: f().item(), a.data)
            nb = numeric_grad(lambda: f().item(), b.data)
        assert rel_err(a.grad, na) <= 1e-6
        assert rel_err(b.grad, nb) <= 1e-6

    def test_second_backward_raises(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        loss = T.sum_all(T.square(x))
        T.backward(loss)
        with pytest.raises(T.GraphError):
            T.backward(loss)

    def test_non_scalar_raises(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(T.ShapeError):
            T.backward(T.square(x))

    def test_gradient_accumulates_over_shared_use(self):
        x = T.Tensor(2.0, requires_grad=True)
        T.backward(T.mul(x, x) + T.scale(x, 3.0))
        assert x.grad == pytest.approx(7.0)

    def test_no_grad_records_nothing(self):
        x = T.Tensor(2.0, requires_grad=True)
        with T.no_grad():
            y = T.square(x)
        assert not y.requires_grad

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_raises(self):
        with pytest.raises(T.NumericError):
            T.scale(T.Tensor([1e308]), 10.0)
        with pytest.raises(T.NumericError):
            T.Tensor([np.inf])


def _random_graph(rng, x, w, g, b):
    """A small composite of most differentiable ops."""
    h = T.add_bias(x @ w, b)
    h = T.layer_norm(h, g, b, 1e-5)
    h = T.gelu(h) + T.tanh(h)
    h = T.concat([h, T.sigmoid(h)], axis=1)
    p = T.softmax_rows(T.permute(T.reshape(h, (2, 3, 4)), (0, 2, 1))[:, :, 1:], None)
    return T.sum_all(T.square(p)) + T.mean_all(T.masked_mean(T.reshape(h, (1, 3, 8)),
                                                              np.array([[True, False, True]])))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composite_graph_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = T.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    g = T.Tensor(rng.normal(size=4) + 1.0, requires_grad=True)
    b = T.Tensor(rng.normal(size=4), requires_grad=True)
    T.backward(_random_graph(rng, x, w, g, b))
    with T.no_grad():
        for t in (x, w, g, b):
            num = numeric_grad(lambda: _random_graph(rng, x, w, g, b).item(), t.data)
            assert rel_err(t.grad, num, atol=1e-9) <= 1e-6
