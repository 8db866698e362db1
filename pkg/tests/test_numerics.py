import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmbayes.numerics import (
    NotPSDError,
    cholesky,
    make_rng,
    sample_dirichlet,
    sample_gaussian_vec,
    sample_orthogonal,
    spectral_radius,
)


class TestCholesky:
    def test_identity(self):
        np.testing.assert_array_equal(cholesky(np.eye(3)), np.eye(3))

    def test_two_by_two(self):
        L = cholesky([[4.0, 2.0], [2.0, 3.0]])
        np.testing.assert_allclose(L, [[2.0, 0.0], [1.0, np.sqrt(2.0)]], atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(cholesky(np.diag([0.25, 9.0])), np.diag([0.5, 3.0]))

    def test_semidefinite_zero_column(self):
        L = cholesky(np.zeros((2, 2)))
        np.testing.assert_array_equal(L, 0.0)
        v = np.array([1.0, 2.0])
        L = cholesky(np.outer(v, v))
        np.testing.assert_allclose(L @ L.T, np.outer(v, v), atol=1e-12)

    def test_not_psd_names_pivot(self):
        with pytest.raises(NotPSDError, match="pivot 1"):
            cholesky([[1.0, 2.0], [2.0, 1.0]])

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky([[1.0, 0.5], [0.0, 1.0]])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_roundtrip_up_to_column_sign(self, dim, seed):
        rng = np.random.default_rng(seed)
        L = np.tril(rng.standard_normal((dim, dim)))
        L[np.diag_indices(dim)] = np.abs(L[np.diag_indices(dim)]) + 0.1
        m = L @ L.T
        L2 = cholesky(m)
        np.testing.assert_allclose(L2 @ L2.T, m, atol=1e-9 * max(1.0, np.abs(m).max()))
        np.testing.assert_allclose(np.abs(L2), np.abs(L), atol=1e-8)


class TestSamplers:
    def test_zero_cov_returns_mean(self):
        mean = np.array([1.5, -2.0])
        np.testing.assert_array_equal(sample_gaussian_vec(mean, np.zeros((2, 2)), make_rng(0)), mean)

    def test_gaussian_law_of_large_numbers(self):
        rng = make_rng(1)
        draws = rng.standard_normal((100_000, 2)) @ cholesky(np.eye(2)).T
        # the vector sampler uses the same transform; check it directly too
        single = np.array([sample_gaussian_vec(np.zeros(2), np.eye(2), rng) for _ in range(2000)])
        assert np.all(np.abs(draws.mean(0)) < 0.02)
        assert np.all(np.abs(single.mean(0)) < 5 / np.sqrt(2000))

    def test_gaussian_determinism(self):
        a = sample_gaussian_vec(np.zeros(3), np.eye(3), make_rng(42))
        b = sample_gaussian_vec(np.zeros(3), np.eye(3), make_rng(42))
        np.testing.assert_array_equal(a, b)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            sample_gaussian_vec(np.zeros(3), np.eye(2), make_rng(0))

    def test_orthogonal_dim1(self):
        q = sample_orthogonal(1, make_rng(3))
        assert q.shape == (1, 1) and abs(abs(q[0, 0]) - 1) < 1e-15

    @pytest.mark.parametrize("seed", range(5))
    def test_orthogonal_property(self, seed):
        q = sample_orthogonal(4, make_rng(seed))
        assert np.max(np.abs(q.T @ q - np.eye(4))) < 1e-9
        assert abs(abs(np.linalg.det(q)) - 1) < 1e-8

    def test_orthogonal_haar_mean(self):
        rng = make_rng(7)
        vals = [sample_orthogonal(3, rng)[0, 0] for _ in range(10_000)]
        assert abs(np.mean(vals)) < 0.03

    def test_orthogonal_rejects_zero(self):
        with pytest.raises(ValueError):
            sample_orthogonal(0, make_rng(0))

    def test_dirichlet_concentrated(self):
        w = sample_dirichlet(1e6, 4, make_rng(0))
        assert np.all(np.abs(w - 0.25) < 0.01)

    def test_dirichlet_dim1(self):
        np.testing.assert_array_equal(sample_dirichlet(0.3, 1, make_rng(0)), [1.0])

    def test_dirichlet_sparse(self):
        # marginals are Beta(a, a (K - 1)): mean 1/K, variance a^2 (K-1) / (a0^2 (a0 + 1)) with a0 = a K
        a, K = 0.1, 50
        a0 = a * K
        draws = sample_dirichlet(a, K, make_rng(11), size=4000)
        assert draws.mean() == pytest.approx(1 / K, rel=1e-9)
        assert draws.var(axis=0).mean() == pytest.approx(a * (a0 - a) / (a0 ** 2 * (a0 + 1)), rel=0.05)
        # the largest weight matches numpy's own sampler in distribution
        ref = make_rng(12).dirichlet(np.full(K, a), size=4000).max(axis=1)
        assert draws.max(axis=1).mean() == pytest.approx(ref.mean(), abs=0.01)

    @pytest.mark.parametrize("alpha", [0.05, 0.1, 1.0, 3.0])
    def test_dirichlet_on_simplex(self, alpha):
        w = sample_dirichlet(alpha, 20, make_rng(5), size=500)
        assert np.all(w >= 0)
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12, rtol=0)

    def test_dirichlet_bad_alpha(self):
        with pytest.raises(ValueError):
            sample_dirichlet(0.0, 3, make_rng(0))

    def test_replay_bit_identical(self):
        a = [sample_orthogonal(3, make_rng(9, 2)), sample_dirichlet(0.5, 6, make_rng(9, 2))]
        b = [sample_orthogonal(3, make_rng(9, 2)), sample_dirichlet(0.5, 6, make_rng(9, 2))]
        for x, y in zip(a, b):
            assert x.tobytes() == y.tobytes()

    def test_substreams_differ(self):
        assert make_rng(1, 0).random() != make_rng(1, 1).random()


class TestSpectralRadius:
    def test_diagonal(self):
        assert spectral_radius(np.diag([0.9, 0.3])) == pytest.approx(0.9, abs=1e-8)

    def test_scaled_rotation(self):
        rot = 0.8 * np.array([[0.0, -1.0], [1.0, 0.0]])
        assert spectral_radius(rot) == pytest.approx(0.8, abs=1e-8)

    def test_identity(self):
        assert spectral_radius(np.eye(5)) == pytest.approx(1.0, abs=1e-8)
