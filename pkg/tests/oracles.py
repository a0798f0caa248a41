"""Independent reference implementations used to cross-check the solvers.

Everything here deliberately avoids the code paths under test: the lasso
oracle is proximal gradient (not coordinate descent), the group oracle is
joint proximal gradient (not block descent), the quantile oracle bisects
the regularized incomplete gamma, and the cross-validation oracle re-runs
the grid with independent cold fits.
"""

import numpy as np
from numba import njit
from scipy import special


# ---------------------------------------------------------------------------
# proximal-gradient lasso (standardized objective, step 1/L)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _ista(xs, yc, lam, step, iters, tol):
    n, p = xs.shape
    b = np.zeros(p)
    for _ in range(iters):
        r = yc - xs @ b
        g = -2.0 / n * (xs.T @ r)
        z = b - step * g
        thr = lam * step
        bn = np.sign(z) * np.maximum(np.abs(z) - thr, 0.0)
        delta = np.max(np.abs(bn - b))
        b = bn
        if delta <= tol:
            break
    return b


def prox_lasso(x, y, lam, iters=1_000_000, tol=1e-14):
    """Reference lasso solution (intercept, coefficients) on the input scale."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    m = x.mean(axis=0)
    sd = np.sqrt(np.mean((x - m) ** 2, axis=0))
    s = np.where(sd > 0, sd, 1.0)
    xs = (x - m) / s
    xs[:, sd == 0] = 0.0
    yc = y - y.mean()
    lip = 2.0 / n * np.linalg.eigvalsh(xs.T @ xs)[-1]
    b = _ista(xs, yc, lam, 1.0 / lip, iters, tol)
    beta = b / s
    beta[sd == 0] = 0.0
    return float(y.mean() - beta @ m), beta


# ---------------------------------------------------------------------------
# joint proximal gradient for the group objective
# ---------------------------------------------------------------------------

def prox_group(braw, y, lam, degree, iters=500_000, tol=1e-12):
    """Reference group-lasso blocks (p, degree) on the standardized scale,
    de-standardized before return, plus the intercept."""
    braw = np.asarray(braw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, q = braw.shape
    p = q // degree
    m = braw.mean(axis=0)
    sd = np.sqrt(np.mean((braw - m) ** 2, axis=0))
    s = np.where(sd > 0, sd, 1.0)
    bs = (braw - m) / s
    bs[:, sd == 0] = 0.0
    yc = y - y.mean()
    lip = 2.0 / n * np.linalg.eigvalsh(bs.T @ bs)[-1]
    step = 1.0 / lip
    thr = lam * np.sqrt(degree) * step
    theta = np.zeros(q)
    for _ in range(iters):
        g = -2.0 / n * (bs.T @ (yc - bs @ theta))
        z = (theta - step * g).reshape(p, degree)
        norms = np.sqrt((z ** 2).sum(axis=1))
        scale = np.where(norms > thr, 1.0 - thr / np.maximum(norms, 1e-300), 0.0)
        new = (z * scale[:, None]).reshape(q)
        delta = np.max(np.abs(new - theta))
        theta = new
        if delta <= tol:
            break
    gamma = theta / s
    gamma[sd == 0] = 0.0
    return float(y.mean() - gamma @ m), gamma.reshape(p, degree)


# ---------------------------------------------------------------------------
# chi-square inverse CDF by bisection on the regularized incomplete gamma
# ---------------------------------------------------------------------------

def chi2_quantile_bisect(df, prob, tol=1e-12):
    lo, hi = 0.0, 1e4
    while special.gammainc(df / 2.0, hi / 2.0) < prob:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if special.gammainc(df / 2.0, mid / 2.0) < prob:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# exhaustive cross-validation over the same grid, with cold fits
# ---------------------------------------------------------------------------

def exhaustive_cv(x, y, folds, grid, rng, fit_fn, predict_fn):
    """Mean out-of-fold squared error per grid value, independent loop.

    Fold membership replicates the contract: one shuffle from `rng`, then
    index mod folds.
    """
    n = x.shape[0]
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=int)
    ids[perm] = np.arange(n) % folds
    errs = np.zeros((folds, len(grid)))
    for f in range(folds):
        tr, va = ids != f, ids == f
        for gi, lam in enumerate(grid):
            fit = fit_fn(x[tr], y[tr], lam)
            resid = y[va] - predict_fn(fit, x[va])
            errs[f, gi] = float(np.mean(resid ** 2))
    return errs.mean(axis=0)


# ---------------------------------------------------------------------------
# explicit feature-sum recomputation of the running imbalance vector
# ---------------------------------------------------------------------------

def lambda_by_summation(covariates, assignments, selected, phi_fn):
    total = None
    for row, arm in zip(np.asarray(covariates), np.asarray(assignments)):
        phi = phi_fn(row[list(selected)])
        signed = phi if arm == 1 else -phi
        total = signed if total is None else total + signed
    return total
