"""Contracts of the dense linear algebra layer."""

import numpy as np
import pytest

from arcslab.errors import DecompositionError
from arcslab.numerics import chol_lower, pinv, sample_cov, spectral


def random_psd(rng, k, rank=None):
    b = rng.standard_normal((k, rank or k))
    return b @ b.T


class TestSampleCov:
    def test_hand_value_unbiased(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        expected = np.array([[1.0 / 3.0, 0.0], [0.0, 1.0 / 3.0]])
        np.testing.assert_allclose(sample_cov(x, ddof=1), expected, atol=1e-15)

    def test_ml_denominator(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 0.0]])
        np.testing.assert_allclose(sample_cov(x, ddof=0), sample_cov(x, ddof=1) * 3 / 4,
                                   atol=1e-15)

    def test_symmetric_and_psd(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            k = int(rng.integers(2, 30))
            p = int(rng.integers(1, 12))
            x = rng.standard_normal((k, p)) * rng.uniform(0.1, 5.0)
            s = sample_cov(x, ddof=int(rng.integers(0, 2)) if k > 1 else 0)
            assert np.array_equal(s, s.T)
            assert np.linalg.eigvalsh(s).min() >= -1e-10

    def test_empty_input_rejected(self):
        with pytest.raises(DecompositionError, match="no observations"):
            sample_cov(np.empty((0, 3)))

    def test_single_row_unbiased_rejected(self):
        with pytest.raises(DecompositionError, match="denominator"):
            sample_cov(np.ones((1, 3)), ddof=1)
        # ML denominator is fine with one row and gives the zero matrix
        np.testing.assert_array_equal(sample_cov(np.ones((1, 3)), ddof=0),
                                      np.zeros((3, 3)))


class TestPinv:
    def test_diagonal_with_null_direction(self):
        a = np.diag([2.0, 0.0])
        np.testing.assert_allclose(pinv(a), np.diag([0.5, 0.0]), atol=1e-15)

    def test_penrose_identities(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            k = int(rng.integers(1, 21))
            rank = int(rng.integers(1, k + 1))
            a = random_psd(rng, k, rank)
            ap = pinv(a)
            scale = max(1.0, np.abs(a).max())
            assert np.abs(a @ ap @ a - a).max() <= 1e-8 * scale
            assert np.abs(ap @ a @ ap - ap).max() <= 1e-8 * max(1.0, np.abs(ap).max())
            assert np.abs((a @ ap) - (a @ ap).T).max() <= 1e-8
            assert np.abs((ap @ a) - (ap @ a).T).max() <= 1e-8

    def test_matches_inverse_when_nonsingular(self):
        rng = np.random.default_rng(5)
        a = random_psd(rng, 6) + 0.5 * np.eye(6)
        np.testing.assert_allclose(pinv(a), np.linalg.inv(a), rtol=1e-9, atol=1e-10)

    def test_tol_ratio_cutoff(self):
        # second eigенvalue sits below the relative cutoff and must be dropped
        a = np.diag([1.0, 1e-13])
        np.testing.assert_allclose(pinv(a, tol_ratio=1e-10), np.diag([1.0, 0.0]))
        # and kept when the cutoff is tightened
        np.testing.assert_allclose(pinv(a, tol_ratio=1e-16), np.diag([1.0, 1e13]),
                                   rtol=1e-9)

    def test_asymmetric_rejected(self):
        a = np.array([[1.0, 0.5], [0.2, 1.0]])
        with pytest.raises(DecompositionError, match="asymmetric"):
            pinv(a)


class TestSpectral:
    def test_descending_and_orthonormal(self):
        rng = np.random.default_rng(1)
        a = random_psd(rng, 8)
        dec = spectral(a)
        assert np.all(np.diff(dec.eigenvalues) <= 1e-12)
        np.testing.assert_allclose(dec.eigenvectors.T @ dec.eigenvectors, np.eye(8),
                                   atol=1e-10)
        recomposed = (dec.eigenvectors * dec.eigenvalues) @ dec.eigenvectors.T
        np.testing.assert_allclose(recomposed, a, atol=1e-8 * np.abs(a).max())


class TestCholLower:
    def test_ar1_hand_values(self):
        corr = 0.5
        idx = np.arange(3)
        sigma = corr ** np.abs(idx[:, None] - idx[None, :])
        lower = chol_lower(sigma)
        expected = np.array([
            [1.0, 0.0, 0.0],
            [0.5, np.sqrt(0.75), 0.0],
            [0.25, 0.375 / np.sqrt(0.75), np.sqrt(0.75)],
        ])
        np.testing.assert_allclose(lower, expected, atol=1e-12)

    def test_recomposition(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            k = int(rng.integers(1, 15))
            a = random_psd(rng, k) + 0.1 * np.eye(k)
            lower = chol_lower(a)
            assert np.allclose(np.triu(lower, 1), 0.0)
            err = np.abs(lower @ lower.T - a).max()
            assert err <= 1e-10 * max(1.0, np.abs(a).max())

    def test_non_pd_rejected(self):
        with pytest.raises(DecompositionError, match="positive definite"):
            chol_lower(np.array([[1.0, 2.0], [2.0, 1.0]]))
