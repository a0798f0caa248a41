"""Dense symmetric linear algebra with explicit tolerance contracts.

Everything here operates on plain numpy float64 arrays. The routines wrap
LAPACK (via numpy.linalg) but pin down the conventions the rest of the
package relies on: eigenvalues sorted descending, symmetric inputs verified
up to a relative tolerance, pseudo-inverse cutoffs relative to the largest
eigenvalue magnitude, and covariance denominators chosen explicitly by the
caller instead of silently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecompositionError

SYM_TOL = 1e-10
PINV_TOL_RATIO = 1e-10


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DecompositionError(f"{name}: expected a 2-d array, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise DecompositionError(f"{name}: non-finite entries")
    return a


def _check_square_symmetric(a: np.ndarray, name: str, tol: float = SYM_TOL) -> None:
    if a.shape[0] != a.shape[1]:
        raise DecompositionError(f"{name}: expected square matrix, got {a.shape}")
    if a.size == 0:
        return
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > tol * scale:
        raise DecompositionError(
            f"{name}: input is asymmetric (relative asymmetry {asym / scale:.3e})"
        )


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition A = V diag(w) V' of a symmetric matrix.

    eigenvalues are sorted descending; eigenvectors holds the matching
    orthonormal eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def spectral(a, sym_tol: float = SYM_TOL) -> SpectralDecomposition:
    """Eigendecompose a symmetric matrix, eigenvalues descending.

    Raises DecompositionError if the input is not (numerically) symmetric
    or the decomposition fails to converge.
    """
    a = _as_matrix(a, "spectral")
    _check_square_symmetric(a, "spectral", sym_tol)
    try:
        w, v = np.linalg.eigh(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:  # pragma: no cover, LAPACK rarely fails
        raise DecompositionError(f"spectral: eigendecomposition failed ({exc})") from exc
    order = np.argsort(w)[::-1]
    return SpectralDecomposition(eigenvalues=w[order], eigenvectors=v[:, order])


def sample_cov(x, ddof: int = 1) -> np.ndarray:
    """Sample covariance of the rows of x (k observations, p variables).

    ddof=1 gives the unbiased k-1 denominator, ddof=0 the maximum-likelihood
    k denominator. The result is exactly symmetric (symmetrized after the
    product) and positive semidefinite up to roundoff.
    """
    x = _as_matrix(x, "sample_cov")
    k = x.shape[0]
    if k == 0:
        raise DecompositionError("sample_cov: no observations")
    if ddof not in (0, 1):
        raise DecompositionError(f"sample_cov: ddof must be 0 or 1, got {ddof}")
    if k - ddof <= 0:
        raise DecompositionError(
            f"sample_cov: {k} observation(s) cannot support denominator k-{ddof}"
        )
    centered = x - x.mean(axis=0)
    s = centered.T @ centered / (k - ddof)
    return 0.5 * (s + s.T)


def pinv(a, tol_ratio: float = PINV_TOL_RATIO) -> np.ndarray:
    """Moore-Penrose pseudo-inverse of a symmetric matrix.

    Eigenvalues with |w_i| <= tol_ratio * max_j |w_j| are treated as zero
    and excluded from the inversion. Asymmetric input (beyond the relative
    symmetry tolerance) is rejected rather than silently symmetrized.
    """
    dec = spectral(a)
    w, v = dec.eigenvalues, dec.eigenvectors
    if w.size == 0:
        return np.zeros_like(np.asarray(a, dtype=np.float64))
    wmax = float(np.max(np.abs(w)))
    inv = np.zeros_like(w)
    if wmax > 0.0:
        keep = np.abs(w) > tol_ratio * wmax
        inv[keep] = 1.0 / w[keep]
    out = (v * inv) @ v.T
    return 0.5 * (out + out.T)


def chol_lower(a, sym_tol: float = SYM_TOL) -> np.ndarray:
    """Lower-triangular Cholesky factor L with A = L L'.

    Raises DecompositionError if the input is asymmetric or not positive
    definite.
    """
    a = _as_matrix(a, "chol_lower")
    _check_square_symmetric(a, "chol_lower", sym_tol)
    try:
        return np.linalg.cholesky(0.5 * (a + a.T))
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"chol_lower: matrix is not positive definite ({exc})") from exc
