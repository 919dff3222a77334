import numpy as np
import pytest

from warpreg.basis import SplineBasis, eval_basis, eval_matrix, gram, orthonormalize
from warpreg.exceptions import DegeneracyError


def cubic10():
    return SplineBasis.uniform((0.0, 1.0), 10)


class TestEval:
    def test_degree0_indicator(self):
        b = SplineBasis(domain=(0.0, 1.0), interior_knots=(0.5,), degree=0)
        assert b.dim == 2
        np.testing.assert_allclose(eval_basis(b, 0.25), [1.0, 0.0])
        np.testing.assert_allclose(eval_basis(b, 0.75), [0.0, 1.0])

    def test_partition_of_unity(self):
        rng = np.random.default_rng(0)
        b = cubic10()
        s = rng.uniform(0, 1, size=10_000)
        vals = eval_matrix(b, s)
        assert vals.min() >= 0.0
        np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-12)

    def test_endpoint_values(self):
        b = cubic10()
        v0 = eval_basis(b, 0.0)
        assert v0[0] == pytest.approx(1.0)
        np.testing.assert_allclose(v0[1:], 0.0, atol=1e-15)
        v1 = eval_basis(b, 1.0)
        assert v1[-1] == pytest.approx(1.0)
        np.testing.assert_allclose(v1[:-1], 0.0, atol=1e-15)

    def test_local_support(self):
        b = cubic10()
        assert (eval_basis(b, 0.37) != 0).sum() <= b.degree + 1

    def test_out_of_domain(self):
        b = cubic10()
        with pytest.raises(ValueError):
            eval_basis(b, -0.01)
        with pytest.raises(ValueError):
            eval_matrix(b, [0.2, 1.4])

    def test_derivative_matches_finite_differences(self):
        b = cubic10()
        s = np.linspace(0.013, 0.987, 41)
        h = 1e-6
        fd = (eval_matrix(b, s + h) - eval_matrix(b, s - h)) / (2 * h)
        np.testing.assert_allclose(eval_matrix(b, s, deriv=1), fd, atol=1e-5)

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            SplineBasis(domain=(1.0, 0.0))
        with pytest.raises(ValueError):
            SplineBasis(domain=(0.0, 1.0), interior_knots=(0.5, 0.5))
        with pytest.raises(ValueError):
            SplineBasis(domain=(0.0, 1.0), interior_knots=(1.2,))


class TestGram:
    def test_degree0_piece_lengths(self):
        b = SplineBasis(domain=(0.0, 1.0), interior_knots=(0.5,), degree=0)
        np.testing.assert_allclose(gram(b), np.diag([0.5, 0.5]), atol=1e-15)

    def test_constant_basis(self):
        b = SplineBasis(domain=(0.0, 2.0), degree=0)
        np.testing.assert_allclose(gram(b), [[2.0]], atol=1e-14)

    def test_against_dense_trapezoid(self):
        b = cubic10()
        s = np.linspace(0.0, 1.0, 1_000_001)
        design = eval_matrix(b, s)
        w = np.full(s.size, s[1] - s[0])
        w[0] = w[-1] = 0.5 * (s[1] - s[0])
        oracle = (design * w[:, None]).T @ design
        np.testing.assert_allclose(gram(b), oracle, atol=1e-8)

    def test_symmetric_positive_definite(self):
        g = gram(cubic10())
        np.testing.assert_allclose(g, g.T, atol=0)
        assert np.linalg.eigvalsh(g).min() > 0


class TestOrthonormalize:
    def test_single_column_scaling(self):
        b = SplineBasis(domain=(0.0, 1.0), degree=0)  # gram = [1]
        c = np.array([[2.0]])
        np.testing.assert_allclose(orthonormalize(c, gram(b)), [[1.0]])

    def test_idempotent(self):
        rng = np.random.default_rng(3)
        g = gram(cubic10())
        coef = orthonormalize(rng.normal(size=(14, 3)), g)
        again = orthonormalize(coef, g)
        np.testing.assert_allclose(again, coef, atol=1e-12)

    def test_metric_orthonormal(self):
        rng = np.random.default_rng(4)
        b = SplineBasis.uniform((0.0, 1.0), 8)
        g = gram(b)
        out = orthonormalize(rng.normal(size=(12, 2)), g)
        np.testing.assert_allclose(out.T @ g @ out, np.eye(2), atol=1e-10)

    def test_span_preserved(self):
        rng = np.random.default_rng(5)
        g = gram(cubic10())
        coef = rng.normal(size=(14, 4))
        out = orthonormalize(coef, g)
        # project each output column onto span(coef); residual should vanish
        qmat, _ = np.linalg.qr(coef)
        resid = out - qmat @ (qmat.T @ out)
        assert np.abs(resid).max() < 1e-10

    def test_rank_deficient(self):
        g = gram(cubic10())
        coef = np.ones((14, 2))
        with pytest.raises(DegeneracyError):
            orthonormalize(coef, g)

    def test_sign_convention(self):
        rng = np.random.default_rng(6)
        g = gram(cubic10())
        out = orthonormalize(rng.normal(size=(14, 3)), g)
        dominant = np.abs(out).argmax(axis=0)
        assert all(out[dominant[k], k] > 0 for k in range(3))
