"""Regularized regression and sequential covariate selection.

Two solver families live here. `lasso_fit` is an L1-penalized least-squares
solver (cyclic coordinate descent with soft-thresholding, unpenalized
intercept, internal column standardization). `additive_fit` is its grouped
counterpart over per-covariate polynomial basis blocks, solved by block
coordinate descent: the group soft-threshold decision zeroes whole blocks,
surviving blocks are minimized exactly.

On top of the solvers sit `cv_lambda` (K-fold selection of the penalty level
along a warm-started path), `support` / `intersect_supports`, and
`arcs_select`, which fits both arms of a trial in progress and intersects
the per-arm supports into the working covariate set.

Objective conventions, with n the number of rows in the fit:

    lasso:    (1/n) sum_i (y_i - mu - x_i' beta)^2 + lambda * sum_j |b_j|
    additive: (1/n) ||y - mu 1 - sum_j B_j theta_j||^2
                  + lambda * sum_j sqrt(d) ||theta_j||_2

where b_j / theta_j are the coefficients of the internally standardized
columns. Reported coefficients are de-standardized back to the input scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np
from numba import njit

from .errors import ConvergenceError

LASSO_TOL = 1e-9
LASSO_MAX_SWEEPS = 100_000
GROUP_TOL = 1e-8
GROUP_MAX_SWEEPS = 50_000
ZERO_TOL = 1e-8
CV_GRID_SIZE = 100
CV_GRID_SPAN = 1e-3


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _lasso_pass(xs, r, lam_half, v, b, idx, k):
    """One cyclic pass of soft-threshold updates over idx[:k]; returns max |change|."""
    n = xs.shape[0]
    max_delta = 0.0
    for t in range(k):
        j = idx[t]
        vj = v[j]
        if vj <= 0.0:
            continue
        col = xs[:, j]
        c = 0.0
        for i in range(n):
            c += col[i] * r[i]
        c = c / n + vj * b[j]
        if c > lam_half:
            bn = (c - lam_half) / vj
        elif c < -lam_half:
            bn = (c + lam_half) / vj
        else:
            bn = 0.0
        d = bn - b[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * col[i]
            b[j] = bn
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@njit(cache=True, fastmath=True)
def _fista_prox(zs, yc, lam_eff, d, theta, r, lip, budget, eps):
    """Momentum proximal descent on the whole design between certifying sweeps.

    Minimizes (1/n)||yc - Z theta||^2 + lam_eff * sum_j ||theta_j|| over size-d
    blocks (d = 1 gives the plain L1 penalty), starting from the current theta.
    Coordinate-style sweeps crawl badly through the ill-conditioned stretches
    of small penalties; this accelerator covers that ground in O(sqrt(kappa))
    iterations and hands back to the sweep criterion for certification. The
    iteration is deterministic; `lip` is a step bound supplied by the caller.
    A growth guard watches for the divergence of a too-small step bound and
    then reverts: theta and r are left exactly as on entry and the negated
    iteration count is returned so the caller can escalate the bound. On
    success theta and r are left mutually consistent and the count is
    returned as is.
    """
    n, q = zs.shape
    if lip <= 0.0 or budget <= 0:
        return 0
    p = q // d
    step = 1.0 / lip
    thr = lam_eff * step
    th = theta.copy()
    yk = theta.copy()
    thnew = np.empty(q)
    u = np.empty(n)
    g = np.empty(q)
    tk = 1.0
    iters = 0
    first_delta = -1.0
    while iters < budget:
        for i in range(n):
            u[i] = yc[i]
        for c in range(q):
            vc = yk[c]
            if vc != 0.0:
                col = zs[:, c]
                for i in range(n):
                    u[i] -= vc * col[i]
        for c in range(q):
            col = zs[:, c]
            acc = 0.0
            for i in range(n):
                acc += col[i] * u[i]
            g[c] = yk[c] + 2.0 * step * acc / n
        delta = 0.0
        for a in range(p):
            base = a * d
            nb = 0.0
            for e in range(d):
                nb += g[base + e] * g[base + e]
            nb = sqrt(nb)
            scale = 0.0 if nb <= thr else 1.0 - thr / nb
            dn = 0.0
            for e in range(d):
                c = base + e
                thnew[c] = scale * g[c]
                dv = thnew[c] - th[c]
                dn += dv * dv
            dn = sqrt(dn)
            if dn > delta:
                delta = dn
        iters += 1
        if first_delta < 0.0:
            first_delta = delta
        elif delta > 1e3 * first_delta + 1e-300:
            # diverging: the step bound is too small. Trip while everything is
            # still finite (growth per iteration is a bounded factor) and hand
            # the entry state back untouched.
            return -iters
        restart = 0.0
        for c in range(q):
            restart += (yk[c] - thnew[c]) * (thnew[c] - th[c])
        if restart > 0.0:
            tk = 1.0
            for c in range(q):
                yk[c] = thnew[c]
        else:
            tk1 = 0.5 * (1.0 + sqrt(1.0 + 4.0 * tk * tk))
            mom = (tk - 1.0) / tk1
            for c in range(q):
                yk[c] = thnew[c] + mom * (thnew[c] - th[c])
            tk = tk1
        for c in range(q):
            th[c] = thnew[c]
        if delta <= eps:
            break
    for c in range(q):
        theta[c] = th[c]
    for i in range(n):
        u[i] = yc[i]
    for c in range(q):
        vc = th[c]
        if vc != 0.0:
            col = zs[:, c]
            for i in range(n):
                u[i] -= vc * col[i]
    for i in range(n):
        r[i] = u[i]
    return iters


@njit(cache=True, fastmath=True)
def _lasso_pass_screen(xs, r, lam_half, thr_half, v, b, widx):
    """Full certifying pass that also collects the working set.

    Performs the same exact cyclic updates as _lasso_pass over every column
    and records which coordinates remain worth visiting: any coordinate active
    before or after its update, plus inactive ones whose gradient magnitude
    clears the screening threshold. Because this is a full pass of exact
    updates, a coordinate wrongly left out of the set would move here and
    push the returned change above tolerance, so screening can never affect
    what counts as converged. Returns (max |change|, working-set size).
    """
    n, p = xs.shape
    max_delta = 0.0
    k = 0
    for j in range(p):
        vj = v[j]
        if vj <= 0.0:
            continue
        col = xs[:, j]
        c = 0.0
        for i in range(n):
            c += col[i] * r[i]
        bold = b[j]
        c = c / n + vj * bold
        if c > lam_half:
            bn = (c - lam_half) / vj
        elif c < -lam_half:
            bn = (c + lam_half) / vj
        else:
            bn = 0.0
        d = bn - bold
        if d != 0.0:
            for i in range(n):
                r[i] -= d * col[i]
            b[j] = bn
            if abs(d) > max_delta:
                max_delta = abs(d)
        if bn != 0.0 or bold != 0.0 or abs(c) >= thr_half:
            widx[k] = j
            k += 1
    return max_delta, k


@njit(cache=True, fastmath=True)
def _cd_lasso_at(xs, yc, lam_half, thr_half, v, b, r, lip, max_sweeps, tol,
                 widx, zwt, thw):
    """Solve one penalty value: working-set solves between full certifying passes.

    Convergence is decided by full sweeps only: the solver returns when no
    coefficient moves more than tol in one cyclic pass over all columns. In
    between, sweeps restricted to the screened set do the bulk of the work,
    with the momentum accelerator bridging ill-conditioned stretches on a
    gathered copy of the working columns. `lip` is a one-element array holding
    the accelerator's step bound; a reverted (diverged) bridge doubles it in
    place, so the correction outlives this penalty value. Working-set
    iterations are charged against the sweep budget pro rata. Returns sweeps
    used, -1 over budget.
    """
    n, p = xs.shape
    sweeps = 0
    while sweeps < max_sweeps:
        delta, k = _lasso_pass_screen(xs, r, lam_half, thr_half, v, b, widx)
        sweeps += 1
        if delta <= tol:
            return sweeps
        solved = False
        for _ in range(10):
            if sweeps >= max_sweeps:
                return -1
            d2 = _lasso_pass(xs, r, lam_half, v, b, widx, k)
            sweeps += 1
            if d2 <= tol:
                solved = True
                break
        eps = 1e-2 * tol
        while not solved and sweeps < max_sweeps:
            if k == p:
                # working set is everything; run on the original design
                it = _fista_prox(xs, yc, 2.0 * lam_half, 1, b, r, lip[0],
                                 max_sweeps - sweeps, eps)
            else:
                for t in range(k):
                    j = widx[t]
                    thw[t] = b[j]
                    for i in range(n):
                        zwt[t, i] = xs[i, j]
                it = _fista_prox(zwt[:k, :].T, yc, 2.0 * lam_half, 1, thw[:k], r,
                                 lip[0], ((max_sweeps - sweeps) * p) // k, eps)
                for t in range(k):
                    b[widx[t]] = thw[t]
            if it < 0:
                lip[0] *= 2.0
                it = -it
            chg = (it * k) // p
            sweeps += chg if chg > 0 else 1
            # loosest exit first; certification failure tightens the next bridge
            if eps > 1e-5 * tol:
                eps *= 0.1
            for _ in range(2):
                if sweeps >= max_sweeps:
                    return -1
                d2 = _lasso_pass(xs, r, lam_half, v, b, widx, k)
                sweeps += 1
                if d2 <= tol:
                    solved = True
                    break
    return -1


@njit(cache=True, fastmath=True)
def _cd_lasso_path(xs, yc, lams, v, lip, out_b, out_sweeps, max_sweeps, tol):
    """Warm-started CD along a descending lambda grid. out_b is (L, p).

    Screening threshold for grid point t keeps inactive coordinates whose
    gradient magnitude reaches 2*lam_t - lam_{t-1} (on the half scale); for
    the first point, or a single-point grid, it degenerates to the plain
    violator rule. The certifying passes re-check every column regardless.
    """
    n, p = xs.shape
    b = np.zeros(p)
    r = yc.copy()
    widx = np.empty(p, dtype=np.int64)
    zwt = np.empty((p, n))
    thw = np.empty(p)
    lip_arr = np.empty(1)
    lip_arr[0] = lip
    for t in range(lams.shape[0]):
        lam_half = lams[t] / 2.0
        prev_half = lams[t - 1] / 2.0 if t > 0 else lam_half
        thr_half = 2.0 * lam_half - prev_half
        sweeps = _cd_lasso_at(xs, yc, lam_half, thr_half, v, b, r, lip_arr,
                              max_sweeps, tol, widx, zwt, thw)
        if sweeps < 0:
            return -(t + 1)
        out_b[t, :] = b
        out_sweeps[t] = sweeps
    return 0

@njit(cache=True, fastmath=True)
def _group_block_solve(w, vec, c, lam_sqd, out):
    """Exact minimizer of (theta' G theta)/2 - c'theta + lam_sqd ||theta||.

    G is given by its eigendecomposition (eigenvalues w >= 0, eigenvector
    columns vec). The block zeroes out exactly when ||c|| <= lam_sqd (the
    group soft-threshold decision); otherwise theta = (G + sigma I)^{-1} c
    with sigma solving the scalar secular equation sigma*||theta|| = lam_sqd,
    found by bisection on a monotone bracket.
    """
    d = c.shape[0]
    ch = np.empty(d)
    for a in range(d):
        acc = 0.0
        for e in range(d):
            acc += vec[e, a] * c[e]
        ch[a] = acc
    nc = 0.0
    for a in range(d):
        nc += ch[a] * ch[a]
    nc = sqrt(nc)
    if nc <= lam_sqd or nc == 0.0:
        for a in range(d):
            out[a] = 0.0
        return
    wmax = 0.0
    for a in range(d):
        if w[a] > wmax:
            wmax = w[a]
    th = np.empty(d)
    if lam_sqd <= 0.0 or wmax <= 0.0:
        # unpenalized block: least-squares within the column span
        cut = 1e-12 * wmax
        for a in range(d):
            th[a] = ch[a] / w[a] if w[a] > cut else 0.0
    else:
        lo = 0.0
        hi = wmax * lam_sqd / (nc - lam_sqd)
        for _ in range(90):
            sig = 0.5 * (lo + hi)
            g = 0.0
            for a in range(d):
                term = ch[a] * sig / (w[a] + sig)
                g += term * term
            if sqrt(g) - lam_sqd < 0.0:
                lo = sig
            else:
                hi = sig
        sig = 0.5 * (lo + hi)
        for a in range(d):
            th[a] = ch[a] / (w[a] + sig)
    for e in range(d):
        acc = 0.0
        for a in range(d):
            acc += vec[e, a] * th[a]
        out[e] = acc


@njit(cache=True, fastmath=True)
def _group_pass(bs, r, lam_sqd, d, gw, gv, theta, idx, k):
    """One pass of exact block updates over idx[:k]; returns max block-norm change."""
    n = bs.shape[0]
    max_delta = 0.0
    c = np.empty(d)
    nv = np.empty(d)
    for t in range(k):
        j = idx[t]
        base = j * d
        # c = (2/n) B_j' r + G_j theta_j, the linear term of the block subproblem;
        # G_j theta_j is applied through the eigenfactors: V diag(w) V' theta
        for a in range(d):
            col = bs[:, base + a]
            g = 0.0
            for i in range(n):
                g += col[i] * r[i]
            c[a] = 2.0 * g / n
        for a in range(d):
            acc = 0.0
            for e in range(d):
                acc += gv[j, e, a] * theta[base + e]
            nv[a] = gw[j, a] * acc
        for e in range(d):
            acc = 0.0
            for a in range(d):
                acc += gv[j, e, a] * nv[a]
            c[e] += acc
        _group_block_solve(gw[j], gv[j], c, lam_sqd, nv)
        dn = 0.0
        for a in range(d):
            dv = nv[a] - theta[base + a]
            if dv != 0.0:
                col = bs[:, base + a]
                for i in range(n):
                    r[i] -= dv * col[i]
                theta[base + a] = nv[a]
            dn += dv * dv
        dn = sqrt(dn)
        if dn > max_delta:
            max_delta = dn
    return max_delta


@njit(cache=True, fastmath=True)
def _group_pass_screen(bs, r, lam_sqd, thr_sqd, d, gw, gv, theta, widx):
    """Full certifying block pass that also collects the working set.

    Same exact updates as _group_pass over every block; a block stays in the
    set if it is active before or after its update, or if its gradient norm
    clears the screening threshold. As with the lasso variant, exclusion can
    never mask non-convergence because every block is updated here.
    Returns (max block-norm change, working-set size).
    """
    n = bs.shape[0]
    p = gw.shape[0]
    max_delta = 0.0
    k = 0
    c = np.empty(d)
    nv = np.empty(d)
    for j in range(p):
        base = j * d
        was = False
        for a in range(d):
            if theta[base + a] != 0.0:
                was = True
                break
        gn2 = 0.0
        for a in range(d):
            col = bs[:, base + a]
            g = 0.0
            for i in range(n):
                g += col[i] * r[i]
            c[a] = 2.0 * g / n
            if not was:
                gn2 += c[a] * c[a]
        if was:
            for a in range(d):
                acc = 0.0
                for e in range(d):
                    acc += gv[j, e, a] * theta[base + e]
                nv[a] = gw[j, a] * acc
            for e in range(d):
                acc = 0.0
                for a in range(d):
                    acc += gv[j, e, a] * nv[a]
                c[e] += acc
        _group_block_solve(gw[j], gv[j], c, lam_sqd, nv)
        dn = 0.0
        now = False
        for a in range(d):
            dv = nv[a] - theta[base + a]
            if dv != 0.0:
                col = bs[:, base + a]
                for i in range(n):
                    r[i] -= dv * col[i]
                theta[base + a] = nv[a]
            if nv[a] != 0.0:
                now = True
            dn += dv * dv
        dn = sqrt(dn)
        if dn > max_delta:
            max_delta = dn
        if was or now or sqrt(gn2) >= thr_sqd:
            widx[k] = j
            k += 1
    return max_delta, k


@njit(cache=True, fastmath=True)
def _cd_group_at(bs, yc, lam_sqd, thr_sqd, d, gw, gv, lip, theta, r,
                 max_sweeps, tol, widx, zwt, thw):
    """Group analogue of _cd_lasso_at: exact block updates certify, screened
    sweeps and the momentum accelerator on gathered blocks do the bulk work.
    `lip` is the same one-element escalating step-bound array."""
    n = bs.shape[0]
    p = gw.shape[0]
    sweeps = 0
    while sweeps < max_sweeps:
        delta, k = _group_pass_screen(bs, r, lam_sqd, thr_sqd, d, gw, gv, theta, widx)
        sweeps += 1
        if delta <= tol:
            return sweeps
        solved = False
        for _ in range(10):
            if sweeps >= max_sweeps:
                return -1
            d2 = _group_pass(bs, r, lam_sqd, d, gw, gv, theta, widx, k)
            sweeps += 1
            if d2 <= tol:
                solved = True
                break
        eps = 1e-2 * tol
        while not solved and sweeps < max_sweeps:
            if k == p:
                it = _fista_prox(bs, yc, lam_sqd, d, theta, r, lip[0],
                                 max_sweeps - sweeps, eps)
            else:
                for t in range(k):
                    base = widx[t] * d
                    for a in range(d):
                        cw = t * d + a
                        thw[cw] = theta[base + a]
                        for i in range(n):
                            zwt[cw, i] = bs[i, base + a]
                it = _fista_prox(zwt[:k * d, :].T, yc, lam_sqd, d, thw[:k * d], r,
                                 lip[0], ((max_sweeps - sweeps) * p) // k, eps)
                for t in range(k):
                    base = widx[t] * d
                    for a in range(d):
                        theta[base + a] = thw[t * d + a]
            if it < 0:
                lip[0] *= 2.0
                it = -it
            chg = (it * k) // p
            sweeps += chg if chg > 0 else 1
            # loosest exit first; certification failure tightens the next bridge
            if eps > 1e-5 * tol:
                eps *= 0.1
            for _ in range(2):
                if sweeps >= max_sweeps:
                    return -1
                d2 = _group_pass(bs, r, lam_sqd, d, gw, gv, theta, widx, k)
                sweeps += 1
                if d2 <= tol:
                    solved = True
                    break
    return -1


@njit(cache=True, fastmath=True)
def _cd_group_path(bs, yc, lams, d, gw, gv, lip, out_t, out_sweeps, max_sweeps, tol):
    n, q = bs.shape
    p = q // d
    theta = np.zeros(q)
    r = yc.copy()
    widx = np.empty(p, dtype=np.int64)
    zwt = np.empty((q, n))
    thw = np.empty(q)
    lip_arr = np.empty(1)
    lip_arr[0] = lip
    sqd = sqrt(d)
    for t in range(lams.shape[0]):
        lam_sqd = lams[t] * sqd
        prev_sqd = lams[t - 1] * sqd if t > 0 else lam_sqd
        thr_sqd = 2.0 * lam_sqd - prev_sqd
        sweeps = _cd_group_at(bs, yc, lam_sqd, thr_sqd, d, gw, gv, lip_arr, theta, r,
                              max_sweeps, tol, widx, zwt, thw)
        if sweeps < 0:
            return -(t + 1)
        out_t[t, :] = theta
        out_sweeps[t] = sweeps
    return 0


# ---------------------------------------------------------------------------
# fit records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LassoFit:
    """L1 fit on the original covariate scale."""

    intercept: float
    coefficients: np.ndarray
    lam: float
    arm: int = -1
    sweeps: int = 0

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=np.float64) @ self.coefficients


@dataclass(frozen=True)
class BasisSpec:
    """Per-covariate polynomial basis: (x - c), ..., (x - c)^degree."""

    degree: int = 3
    centers: np.ndarray | float | None = None

    def __post_init__(self):
        if self.degree not in (2, 3, 4):
            raise ValueError(f"basis degree must be 2, 3 or 4, got {self.degree}")

    def center_for(self, col: int) -> float:
        if self.centers is None:
            return 0.0
        c = np.asarray(self.centers, dtype=np.float64)
        return float(c) if c.ndim == 0 else float(c[col])


@dataclass(frozen=True)
class AdditiveFit:
    """Group-penalized additive fit; groups holds one coefficient block per covariate."""

    intercept: float
    groups: np.ndarray            # (p, degree), original basis scale
    basis: BasisSpec              # centers resolved to the training means
    lam: float
    arm: int = -1
    sweeps: int = 0

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        b = _raw_basis(x, self.basis)
        return self.intercept + b @ self.groups.reshape(-1)


@dataclass(frozen=True)
class CVResult:
    """Outcome of a cross-validated penalty search."""

    best_lambda: float
    grid: np.ndarray
    mean_errors: np.ndarray
    folds_used: int
    reduced_folds: bool = False


@dataclass(frozen=True)
class SelectionResult:
    """Per-arm fits and the intersected working set for one refit event."""

    selected: tuple[int, ...]
    stale: bool
    mode: str
    fits: tuple | None = None
    supports: tuple[tuple[int, ...], tuple[int, ...]] | None = None
    cv: tuple | None = None


# ---------------------------------------------------------------------------
# standardization helpers
# ---------------------------------------------------------------------------

def _validate_xy(x, y, min_rows: int):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2:
        raise ValueError(f"design must be 2-d, got ndim={x.ndim}")
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"row mismatch: design has {x.shape[0]} rows, outcome {y.shape[0]}")
    if x.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {x.shape[0]}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite values in fit input")
    return x, y


def _standardize(x: np.ndarray, rescale: bool):
    """Center (and optionally scale to unit ML std) each column.

    Zero-variance columns are left as all-zero columns with scale flag 0 so
    the solver skips them and their coefficients stay at 0.
    """
    m = x.mean(axis=0)
    xc = x - m
    sd = np.sqrt(np.mean(xc * xc, axis=0))
    if rescale:
        s = np.where(sd > 0.0, sd, 1.0)
        xs = np.asfortranarray(xc / s)
        v = np.where(sd > 0.0, 1.0, 0.0)
    else:
        s = np.ones_like(sd)
        xs = np.asfortranarray(xc)
        v = np.where(sd > 0.0, sd * sd, 0.0)
    return xs, m, s, v, sd


def _power_lip(zs: np.ndarray) -> float:
    """Upper estimate of the largest eigenvalue of (2/n) Z'Z by power iteration.

    Deterministic fixed start, 60 iterations, 10% safety margin on top; used
    as the step bound for the momentum accelerator. Returns 0 for an all-zero
    design (the accelerator then never runs). The start profile is an
    irrational-phase cosine rather than the uniform vector: standardized
    designs have a constant Gram diagonal, for which the uniform vector can
    be an exact non-top eigenvector (it always is with two anticorrelated
    columns) and would trap the iteration below the true value. Should the
    estimate still fall short, the bridge's growth guard catches it at run
    time and the step bound is doubled.
    """
    n, q = zs.shape
    if q == 0:
        return 0.0
    v = 1.0 + 0.5 * np.cos(2.3 * np.arange(q) + 0.7)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(60):
        w = zs.T @ (zs @ v) * (2.0 / n)
        nw = float(np.linalg.norm(w))
        if nw <= 0.0:
            return 0.0
        est = nw
        v = w / nw
    return 1.1 * est


def lambda_max(x, y) -> float:
    """Smallest penalty at which the lasso solution is entirely zero."""
    x, y = _validate_xy(x, y, 1)
    xs, _, _, _, _ = _standardize(x, rescale=True)
    yc = y - y.mean()
    if xs.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(xs.T @ yc)) * 2.0 / x.shape[0])


# ---------------------------------------------------------------------------
# lasso
# ---------------------------------------------------------------------------

def lasso_fit(x, y, lam: float, arm: int = -1, standardize: bool = True,
              max_sweeps: int = LASSO_MAX_SWEEPS, tol: float = LASSO_TOL) -> LassoFit:
    """L1-penalized least squares by cyclic coordinate descent.

    The intercept is unpenalized. Columns are standardized internally and
    coefficients mapped back to the input scale on return; pass
    standardize=False to penalize on the raw (centered) scale instead.
    Convergence is declared when no coefficient moves more than `tol` in a
    full sweep; exceeding `max_sweeps` raises ConvergenceError.
    """
    x, y = _validate_xy(x, y, 2)
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n, p = x.shape
    xs, m, s, v, _ = _standardize(x, standardize)
    ybar = float(y.mean())
    yc = y - ybar
    out_b = np.zeros((1, p))
    out_sweeps = np.zeros(1, dtype=np.int64)
    status = _cd_lasso_path(xs, yc, np.array([float(lam)]), v, _power_lip(xs),
                            out_b, out_sweeps, max_sweeps, tol)
    if status < 0:
        raise ConvergenceError(
            f"lasso did not converge in {max_sweeps} sweeps (n={n}, p={p}, lambda={lam})")
    beta = out_b[0] / s
    mu = ybar - float(beta @ m)
    return LassoFit(intercept=mu, coefficients=beta, lam=float(lam), arm=arm,
                    sweeps=int(out_sweeps[0]))


def kkt_violation(x, y, fit: LassoFit, standardize: bool = True) -> float:
    """Largest violation of the lasso stationarity conditions for `fit`.

    Zero (up to solver tolerance) certifies optimality: for inactive
    coordinates |(2/n) xt_j' r| may not exceed lambda, for active ones the
    subgradient equation must hold with equality.
    """
    x, y = _validate_xy(x, y, 2)
    n = x.shape[0]
    xs, _, s, v, _ = _standardize(x, standardize)
    r = y - fit.predict(x)
    g = xs.T @ r * (2.0 / n)
    b = fit.coefficients * s
    worst = 0.0
    for j in range(x.shape[1]):
        if v[j] <= 0.0:
            continue
        if b[j] == 0.0:
            worst = max(worst, abs(g[j]) - fit.lam)
        else:
            worst = max(worst, abs(g[j] - fit.lam * np.sign(b[j])))
    return float(max(worst, 0.0))


def _lasso_path(x, y, grid, max_sweeps=LASSO_MAX_SWEEPS, tol=LASSO_TOL):
    """Fit the full lambda grid with warm starts; returns (beta (L,p), mu (L,))."""
    n, p = x.shape
    xs, m, s, v, _ = _standardize(x, rescale=True)
    ybar = float(y.mean())
    yc = y - ybar
    out_b = np.zeros((grid.shape[0], p))
    out_sweeps = np.zeros(grid.shape[0], dtype=np.int64)
    status = _cd_lasso_path(xs, yc, np.asarray(grid, dtype=np.float64), v, _power_lip(xs),
                            out_b, out_sweeps, max_sweeps, tol)
    if status < 0:
        raise ConvergenceError(
            f"lasso path stalled at grid index {-status - 1} (n={n}, p={p})")
    beta = out_b / s
    mu = ybar - beta @ m
    return beta, mu


# ---------------------------------------------------------------------------
# additive basis and group lasso
# ---------------------------------------------------------------------------

def basis_expand(x: float, spec: BasisSpec, col: int = 0) -> np.ndarray:
    """Centered monomials ((x-c), ..., (x-c)^degree) for one covariate value."""
    c = spec.center_for(col)
    z = float(x) - c
    return np.array([z ** (a + 1) for a in range(spec.degree)])


def _raw_basis(x: np.ndarray, spec: BasisSpec) -> np.ndarray:
    """Stack per-covariate monomial blocks into an (n, p*degree) design."""
    n, p = x.shape
    d = spec.degree
    if spec.centers is None:
        centers = np.zeros(p)
    else:
        c = np.asarray(spec.centers, dtype=np.float64)
        centers = np.full(p, float(c)) if c.ndim == 0 else c
    z = x - centers
    out = np.empty((n, p * d))
    power = z.copy()
    out[:, 0::d] = power
    for a in range(1, d):
        power = power * z
        out[:, a::d] = power
    return out


def _resolve_basis(x: np.ndarray, spec: BasisSpec) -> BasisSpec:
    if spec.centers is not None:
        return spec
    return BasisSpec(degree=spec.degree, centers=x.mean(axis=0))


def additive_fit(x, y, lam: float, spec: BasisSpec | None = None, arm: int = -1,
                 max_sweeps: int = GROUP_MAX_SWEEPS, tol: float = GROUP_TOL) -> AdditiveFit:
    """Group-penalized additive fit over per-covariate polynomial blocks.

    Each covariate contributes one block of centered monomials, standardized
    column-wise inside the solver. The penalty is lambda * sqrt(d) times the
    block L2 norm, so whole blocks enter or leave together: a block is set to
    exactly zero by the group soft-threshold decision, and a surviving block
    is solved exactly through its Gram eigendecomposition. Convergence is
    declared when no block norm moves more than `tol` in a full sweep.
    """
    spec = spec or BasisSpec()
    x, y = _validate_xy(x, y, spec.degree + 2)
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n, p = x.shape
    spec = _resolve_basis(x, spec)
    theta, mu, _, sweeps = _group_path_core(x, y, np.array([lam]), spec, max_sweeps, tol)
    return AdditiveFit(intercept=float(mu[0]), groups=theta[0].reshape(p, spec.degree),
                       basis=spec, lam=float(lam), arm=arm, sweeps=int(sweeps[0]))


def _group_path_core(x, y, grid, spec: BasisSpec, max_sweeps=GROUP_MAX_SWEEPS,
                     tol=GROUP_TOL):
    """Shared path driver for additive fits; returns de-standardized blocks."""
    n, p = x.shape
    d = spec.degree
    braw = _raw_basis(x, spec)
    bs, m, s, _, _ = _standardize(braw, rescale=True)
    ybar = float(y.mean())
    yc = y - ybar
    # per-block Gram eigendecompositions, computed once and reused by every
    # exact block update along the whole grid
    blocks = np.ascontiguousarray(bs).reshape(n, p, d)
    gram = 2.0 / n * np.einsum("ija,ijb->jab", blocks, blocks)
    gram = 0.5 * (gram + gram.transpose(0, 2, 1))
    gw, gv = np.linalg.eigh(gram)
    gw = np.maximum(gw, 0.0)
    out_t = np.zeros((grid.shape[0], p * d))
    out_sweeps = np.zeros(grid.shape[0], dtype=np.int64)
    status = _cd_group_path(bs, yc, np.asarray(grid, dtype=np.float64), d, gw, gv,
                            _power_lip(bs), out_t, out_sweeps, max_sweeps, tol)
    if status < 0:
        raise ConvergenceError(
            f"group lasso path stalled at grid index {-status - 1} (n={n}, p={p}, d={d})")
    gamma = out_t / s
    mu = ybar - gamma @ m
    return gamma, mu, spec, out_sweeps


def group_lambda_max(x, y, spec: BasisSpec | None = None) -> float:
    """Smallest penalty at which every additive block is zero."""
    spec = spec or BasisSpec()
    x, y = _validate_xy(x, y, 1)
    spec = _resolve_basis(x, spec)
    bs, _, _, _, _ = _standardize(_raw_basis(x, spec), rescale=True)
    yc = y - y.mean()
    g = bs.T @ yc * (2.0 / x.shape[0])
    norms = np.sqrt((g.reshape(x.shape[1], spec.degree) ** 2).sum(axis=1))
    return float(norms.max() / sqrt(spec.degree)) if norms.size else 0.0


# ---------------------------------------------------------------------------
# support extraction
# ---------------------------------------------------------------------------

def support(fit, zero_tol: float = ZERO_TOL) -> tuple[int, ...]:
    """Indices of covariates the fit considers active."""
    if isinstance(fit, AdditiveFit):
        norms = np.sqrt((fit.groups ** 2).sum(axis=1))
        return tuple(int(j) for j in np.nonzero(norms > zero_tol)[0])
    return tuple(int(j) for j in np.nonzero(np.abs(fit.coefficients) > zero_tol)[0])


def intersect_supports(a, b) -> tuple[int, ...]:
    """Sorted intersection of two covariate index sets."""
    return tuple(sorted(set(a) & set(b)))


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def _fold_ids(n: int, folds: int, rng) -> np.ndarray:
    perm = rng.permutation(n)
    ids = np.empty(n, dtype=np.int64)
    ids[perm] = np.arange(n) % folds
    return ids


def _make_grid(lam_max: float, grid_size: int) -> np.ndarray:
    if lam_max <= 0.0:
        return np.zeros(1)
    if grid_size == 1:
        return np.array([lam_max])
    return np.geomspace(lam_max, CV_GRID_SPAN * lam_max, grid_size)


def _cv_core(x, y, folds, grid_size, rng, rule, path_fn, lmax_fn):
    x, y = _validate_xy(x, y, 3)
    n = x.shape[0]
    reduced = n < folds
    folds_eff = max(2, min(folds, n))
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if rule not in ("min", "1se"):
        raise ValueError(f"unknown CV rule {rule!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    grid = _make_grid(lmax_fn(x, y), grid_size)
    ids = _fold_ids(n, folds_eff, rng)
    errs = np.zeros((folds_eff, grid.shape[0]))
    for f in range(folds_eff):
        tr = ids != f
        preds = path_fn(x[tr], y[tr], grid, x[~tr])
        resid = y[~tr][:, None] - preds
        errs[f] = np.mean(resid * resid, axis=0)
    mean_errs = errs.mean(axis=0)
    best = int(np.argmin(mean_errs))
    if rule == "1se" and folds_eff > 1:
        se = errs.std(axis=0, ddof=1)[best] / sqrt(folds_eff)
        cutoff = mean_errs[best] + se
        best = int(np.nonzero(mean_errs <= cutoff)[0][0])
    return CVResult(best_lambda=float(grid[best]), grid=grid, mean_errors=mean_errs,
                    folds_used=folds_eff, reduced_folds=reduced)


def cv_lambda(x, y, folds: int = 5, grid_size: int = CV_GRID_SIZE, rng=None,
              rule: str = "min") -> CVResult:
    """Pick the lasso penalty by K-fold cross-validation.

    The grid is log-spaced from lambda_max down to 1e-3 * lambda_max and fit
    with warm starts inside each fold. Fold membership is index mod folds
    after one shuffle drawn from `rng`. If there are fewer rows than folds
    the fold count is reduced to max(2, n) and the result is flagged.
    """
    def path_fn(xt, yt, grid, xv):
        beta, mu = _lasso_path(xt, yt, grid)
        return xv @ beta.T + mu

    return _cv_core(x, y, folds, grid_size, rng, rule, path_fn, lambda_max)


def cv_lambda_additive(x, y, folds: int = 5, grid_size: int = CV_GRID_SIZE, rng=None,
                       rule: str = "min", spec: BasisSpec | None = None) -> CVResult:
    """Additive-mode counterpart of cv_lambda (group penalty, basis blocks)."""
    base = spec or BasisSpec()

    def path_fn(xt, yt, grid, xv):
        resolved = _resolve_basis(xt, base)
        gamma, mu, _, _ = _group_path_core(xt, yt, grid, resolved)
        return _raw_basis(xv, resolved) @ gamma.T + mu

    return _cv_core(x, y, folds, grid_size, rng, rule, path_fn,
                    lambda a, b: group_lambda_max(a, b, base))


# ---------------------------------------------------------------------------
# per-arm selection
# ---------------------------------------------------------------------------

def arcs_select(covariates, assignments, outcomes, mode: str = "lasso",
                cv_folds: int = 5, rng=None, previous: tuple[int, ...] = (),
                grid_size: int = CV_GRID_SIZE, rule: str = "min",
                basis: BasisSpec | None = None,
                zero_tol: float = ZERO_TOL) -> SelectionResult:
    """Refit both arms on the revealed patients and intersect the supports.

    Arm 0 is fit first, then arm 1; each arm consumes one fold shuffle from
    `rng`. If either arm has too few patients to fit (fewer than 3, or
    fewer than degree+2 in additive mode) the previous working set is
    retained and the result is flagged stale.
    """
    if mode not in ("lasso", "additive"):
        raise ValueError(f"unknown selection mode {mode!r}")
    x = np.asarray(covariates, dtype=np.float64)
    t = np.asarray(assignments)
    y = np.asarray(outcomes, dtype=np.float64)
    spec = basis or BasisSpec()
    floor = 3 if mode == "lasso" else max(3, spec.degree + 2)
    masks = (t == 0, t == 1)
    if min(int(m.sum()) for m in masks) < floor:
        return SelectionResult(selected=tuple(previous), stale=True, mode=mode)
    fits, sups, cvs = [], [], []
    for arm, mask in enumerate(masks):
        xa, ya = x[mask], y[mask]
        if mode == "lasso":
            cv = cv_lambda(xa, ya, folds=cv_folds, grid_size=grid_size, rng=rng, rule=rule)
            fit = lasso_fit(xa, ya, cv.best_lambda, arm=arm)
        else:
            cv = cv_lambda_additive(xa, ya, folds=cv_folds, grid_size=grid_size,
                                    rng=rng, rule=rule, spec=spec)
            fit = additive_fit(xa, ya, cv.best_lambda, spec=spec, arm=arm)
        fits.append(fit)
        cvs.append(cv)
        sups.append(support(fit, zero_tol))
    return SelectionResult(selected=intersect_supports(sups[0], sups[1]), stale=False,
                           mode=mode, fits=tuple(fits), supports=tuple(sups),
                           cv=tuple(cvs))
