"""Imbalance measures and the running imbalance state.

The assignment rules in `engine` steer each allocation by how much it would
move one of two imbalance measures:

* the quadratic feature imbalance Imb^phi = ||Lambda||^2 with
  Lambda = sum_i (2 T_i - 1) phi(x_i), phi the weighted feature map over the
  working covariate set (constant block, linear block, outer-product block);
* the pairwise Mahalanobis imbalance Imb^M = (k/2) d' S^+ d with d the
  difference of arm means and S the sample covariance of all k revealed
  rows, both restricted to the working set.

`report_metrics` evaluates the end-of-trial versions of both (plus the
decomposition-free DNCM / DNC norms and the difference-in-means effect
estimate) on a caller-supplied reference covariate set rather than the set
the procedure happened to select.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import sqrt

import numpy as np

from .errors import ImbalanceUndefinedError
from .numerics import PINV_TOL_RATIO, pinv, sample_cov

# Most of the default weight sits on the linear block: with an even split the
# outer-product block (s^2 entries at ||x||^2 scale) dominates the steering
# signal and arm-mean balance runs several times looser.
COV_WEIGHTS = (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0)
MAHALANOBIS_WEIGHTS = (0.5, 0.5)
TIE_EPS = 1e-12


@dataclass(frozen=True)
class PhiSpec:
    """Feature-map family and its nonnegative weights (must sum to 1).

    kind "cov" uses three weights (constant, linear, quadratic blocks);
    kind "mahalanobis" uses two (constant, whitened linear block).
    """

    kind: str = "cov"
    weights: tuple[float, ...] = COV_WEIGHTS

    def __post_init__(self):
        if self.kind not in ("cov", "mahalanobis"):
            raise ValueError(f"unknown phi family {self.kind!r}")
        need = 3 if self.kind == "cov" else 2
        w = tuple(float(v) for v in self.weights)
        if len(w) != need:
            raise ValueError(f"{self.kind} family needs {need} weights, got {len(w)}")
        if any(v < 0 for v in w):
            raise ValueError(f"weights must be nonnegative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1, got {w}")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class ImbalanceState:
    """Running signed feature sum Lambda over the current working set."""

    selected: tuple[int, ...]
    spec: PhiSpec
    lambda_vec: np.ndarray

    @property
    def imb_phi(self) -> float:
        return float(self.lambda_vec @ self.lambda_vec)


def phi_cov(x_sel, spec: PhiSpec) -> np.ndarray:
    """Feature map (sqrt(w0), sqrt(w1) x', sqrt(w2) vec(xx')')' on the working set.

    With an empty working set this degenerates to the one-dimensional
    constant block, which reduces the assignment rule to balancing group
    counts.
    """
    if spec.kind != "cov":
        raise ValueError("phi_cov requires a cov-family PhiSpec")
    x = np.asarray(x_sel, dtype=np.float64).reshape(-1)
    w0, w1, w2 = spec.weights
    return np.concatenate((
        np.array([sqrt(w0)]),
        sqrt(w1) * x,
        sqrt(w2) * np.outer(x, x).ravel(),
    ))


def new_state(selected: tuple[int, ...], spec: PhiSpec) -> ImbalanceState:
    s = len(selected)
    return ImbalanceState(selected=tuple(selected), spec=spec,
                          lambda_vec=np.zeros(1 + s + s * s))


def rebuild_state(covariates, assignments, selected, spec: PhiSpec) -> ImbalanceState:
    """Recompute Lambda from scratch over the given history.

    Used whenever the working set changes at a batch boundary; block
    closed forms avoid materializing per-patient feature vectors.
    """
    x = np.asarray(covariates, dtype=np.float64)
    t = np.asarray(assignments, dtype=np.float64)
    signs = 2.0 * t - 1.0
    sel = list(selected)
    xs = x[:, sel]
    w0, w1, w2 = spec.weights
    const = np.array([sqrt(w0) * signs.sum()])
    lin = sqrt(w1) * (xs.T @ signs)
    quad = sqrt(w2) * (xs.T @ (signs[:, None] * xs)).ravel()
    return ImbalanceState(selected=tuple(selected), spec=spec,
                          lambda_vec=np.concatenate((const, lin, quad)))


def update_lambda(state: ImbalanceState, arm: int, phi: np.ndarray) -> ImbalanceState:
    """Fold one assignment into Lambda: add phi for arm 1, subtract for arm 0."""
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    if phi.shape != state.lambda_vec.shape:
        raise ValueError(
            f"phi dimension {phi.shape[0]} does not match state "
            f"dimension {state.lambda_vec.shape[0]}")
    sign = 1.0 if arm == 1 else -1.0
    return ImbalanceState(selected=state.selected, spec=state.spec,
                          lambda_vec=state.lambda_vec + sign * phi)


def imb_delta(state: ImbalanceState, phi: np.ndarray) -> float:
    """Imb(arm 1) - Imb(arm 0) for the pending patient, namely 4 <Lambda, phi>.

    ||Lambda + phi||^2 - ||Lambda - phi||^2 collapses to the inner product,
    so the engine never forms either hypothetical state.
    """
    if phi.shape != state.lambda_vec.shape:
        raise ValueError(
            f"phi dimension {phi.shape[0]} does not match state "
            f"dimension {state.lambda_vec.shape[0]}")
    return 4.0 * float(state.lambda_vec @ phi)


def tie_scale(state: ImbalanceState, phi: np.ndarray) -> float:
    """Magnitude reference for tie detection: 1 + Imb(1) + Imb(0)."""
    return 1.0 + 2.0 * (float(state.lambda_vec @ state.lambda_vec) + float(phi @ phi))


def mahalanobis_imb(x_sel, assignments, tol_ratio: float = PINV_TOL_RATIO,
                    ddof: int = 1) -> float:
    """(k/2) d' S^+ d over the k given rows, d the arm-mean difference.

    S is the sample covariance of all k rows of x_sel; its pseudo-inverse
    absorbs the rank-deficient regime (more columns than rows). An empty
    working set scores 0. Both arms must be represented.
    """
    x = np.asarray(x_sel, dtype=np.float64)
    t = np.asarray(assignments)
    if x.ndim != 2 or x.shape[0] != t.shape[0]:
        raise ValueError(f"shape mismatch: rows {x.shape} vs assignments {t.shape}")
    if x.shape[1] == 0:
        return 0.0
    m1 = t == 1
    m0 = t == 0
    if not (m1.any() and m0.any()):
        raise ImbalanceUndefinedError(
            "Mahalanobis imbalance undefined: one arm has no patients")
    k = x.shape[0]
    d = x[m1].mean(axis=0) - x[m0].mean(axis=0)
    s = sample_cov(x, ddof=ddof)
    return 0.5 * k * float(d @ pinv(s, tol_ratio) @ d)


@dataclass
class RunMetrics:
    """End-of-trial scores evaluated on a reference covariate set."""

    imb_m: float
    dncm: float
    dnc: float
    imb_phi: float
    tau: float
    tpr: tuple[float, ...]
    fpr: tuple[float, ...]
    wall_time: float = 0.0


def selection_rates(selected, true_set, p: int) -> tuple[float, float]:
    """(TPR, FPR) of one working set against the reference set."""
    sel = set(selected)
    truth = set(true_set)
    tpr = len(sel & truth) / len(truth) if truth else 1.0
    denom = p - len(truth)
    fpr = len(sel - truth) / denom if denom > 0 else 0.0
    return tpr, fpr


def report_metrics(trial, true_set, phi_spec: PhiSpec | None = None,
                   tol_ratio: float = PINV_TOL_RATIO) -> RunMetrics:
    """Score a finished trial on the reference set `true_set`.

    Conventions: Imb^M uses the pooled covariance with the k-1 denominator,
    DNC compares per-arm maximum-likelihood covariances, Imb^phi recomputes
    Lambda from scratch with a cov-family feature map (the trial's own map if
    it is one, the default weights otherwise).
    """
    x = np.asarray(trial.covariates, dtype=np.float64)
    t = np.asarray(trial.assignments)
    y = np.asarray(trial.outcomes, dtype=np.float64)
    n, p = x.shape
    sel = list(true_set)
    xs = x[:, sel]
    m1 = t == 1
    m0 = t == 0
    if not (m1.any() and m0.any()):
        raise ImbalanceUndefinedError("metrics undefined: one arm has no patients")

    d = xs[m1].mean(axis=0) - xs[m0].mean(axis=0)
    dncm = float(n * n * (d @ d))
    c1 = sample_cov(xs[m1], ddof=0)
    c0 = sample_cov(xs[m0], ddof=0)
    dnc = float(n * n * np.sum((c1 - c0) ** 2))
    imb_m = mahalanobis_imb(xs, t, tol_ratio=tol_ratio, ddof=1)

    spec = phi_spec if phi_spec is not None and phi_spec.kind == "cov" \
        else PhiSpec(kind="cov", weights=COV_WEIGHTS)
    imb_phi = rebuild_state(x, t, tuple(sel), spec).imb_phi

    tau = float(y[m1].mean() - y[m0].mean())
    rates = [selection_rates(s, true_set, p) for s in trial.selection_history]
    return RunMetrics(imb_m=imb_m, dncm=dncm, dnc=dnc, imb_phi=imb_phi, tau=tau,
                      tpr=tuple(r[0] for r in rates), fpr=tuple(r[1] for r in rates))
