"""Sequential assignment engines.

Four competitor designs and the batched adaptive procedure, in two flavors
keyed by which imbalance measure steers the biased coin:

* CR: independent fair coin per patient.
* RR: rerandomization, redraw balanced splits until the full-covariate
  Mahalanobis statistic clears a chi-square threshold.
* ARM: pairwise assignment minimizing the Mahalanobis imbalance over all
  covariates.
* COV: per-patient assignment minimizing the quadratic feature imbalance
  over all covariates.
* ARCS-M / ARCS-COV (and their -add variants): like ARM / COV but restricted
  to a working covariate set refit from outcome data at batch boundaries.

Randomness contract: every run function takes a numpy Generator `rng` that
is consumed in a fixed order (one uniform per burn-in pair, then one uniform
per assignment decision; RR consumes one permutation per redraw). Selecting
variants additionally take `select_rng`, consumed only by the fold shuffles
of the cross-validated refits (two shuffles per refit, arm 0 then arm 1).
Identical inputs and generator states reproduce a trial bit for bit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .balance import (COV_WEIGHTS, ImbalanceState, PhiSpec, imb_delta, mahalanobis_imb,
                      phi_cov, rebuild_state, tie_scale, update_lambda)
from .errors import ArcsError, ConfigError, DrawBudgetError
from .numerics import PINV_TOL_RATIO, pinv, sample_cov
from .selection import CV_GRID_SIZE, BasisSpec, arcs_select

log = logging.getLogger("arcslab")

TIE_EPS = 1e-12

METHODS = ("CR", "RR", "ARM", "COV", "ARCS-M", "ARCS-COV", "ARCS-M-ADD", "ARCS-COV-ADD")
SELECTING = ("ARCS-M", "ARCS-COV", "ARCS-M-ADD", "ARCS-COV-ADD")
PAIRWISE = ("ARM", "ARCS-M", "ARCS-M-ADD")


def canonical_method(name: str) -> str:
    m = name.strip().upper().replace("_", "-")
    if m not in METHODS:
        raise ConfigError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    return m


@dataclass(frozen=True)
class TrialConfig:
    """Knobs for one trial; validated per method by `validate`."""

    n: int
    p: int
    method: str = "ARCS-COV"
    n0: int = 30
    batch_size: int = 10
    rho: float = 0.85
    phi: PhiSpec | None = None
    cv_folds: int = 5
    cv_grid_size: int = CV_GRID_SIZE
    cv_rule: str = "min"
    basis_degree: int = 3
    rr_accept_prob: float = 0.001
    rr_max_draws: int = 1_000_000
    seed: int = 0
    pinv_tol_ratio: float = PINV_TOL_RATIO
    zero_tol: float = 1e-8

    @property
    def selection_mode(self) -> str:
        return "additive" if self.method.endswith("-ADD") else "lasso"

    @property
    def batches(self) -> int:
        return (self.n - self.n0) // self.batch_size


def validate(config: TrialConfig) -> TrialConfig:
    """Normalize the method name and enforce the per-method invariants."""
    cfg = replace(config, method=canonical_method(config.method))
    if cfg.n < 2:
        raise ConfigError(f"n must be at least 2, got {cfg.n}")
    if cfg.p < 1:
        raise ConfigError(f"p must be positive, got {cfg.p}")
    if not (0.5 < cfg.rho < 1.0):
        raise ConfigError(f"rho must lie in (0.5, 1), got {cfg.rho}")
    m = cfg.method
    if m in SELECTING or m in ("ARM", "COV"):
        if cfg.n0 % 2 != 0 or cfg.n0 < 2:
            raise ConfigError(f"burn-in length N0 must be even and >= 2, got {cfg.n0}")
        if cfg.n < cfg.n0:
            raise ConfigError(f"n={cfg.n} is smaller than the burn-in N0={cfg.n0}")
    if m in SELECTING:
        if cfg.batch_size < 1:
            raise ConfigError(f"batch size N must be positive, got {cfg.batch_size}")
        if (cfg.n - cfg.n0) % cfg.batch_size != 0:
            raise ConfigError(
                f"n - N0 must be a multiple of the batch size: "
                f"n={cfg.n}, N0={cfg.n0}, N={cfg.batch_size}")
        if cfg.cv_folds < 2:
            raise ConfigError(f"cv_folds must be at least 2, got {cfg.cv_folds}")
        if cfg.cv_grid_size < 1:
            raise ConfigError(f"cv_grid_size must be positive, got {cfg.cv_grid_size}")
    if m in PAIRWISE:
        if cfg.n % 2 != 0:
            raise ConfigError(f"pairwise methods need even n, got {cfg.n}")
        if m != "ARM" and cfg.batch_size % 2 != 0:
            raise ConfigError(
                f"pairwise batches must have even size, got N={cfg.batch_size}")
    if m == "RR":
        if cfg.n % 2 != 0:
            raise ConfigError(f"rerandomization needs even n, got {cfg.n}")
        if cfg.p >= cfg.n:
            raise ConfigError(
                f"rerandomization requires p < n (got p={cfg.p}, n={cfg.n}): with "
                f"p >= n every balanced split leaves the Mahalanobis statistic at "
                f"its degenerate value, so no redraw can clear the threshold")
        if not (0.0 < cfg.rr_accept_prob < 1.0):
            raise ConfigError(f"rr_accept_prob must lie in (0, 1), got {cfg.rr_accept_prob}")
        if cfg.rr_max_draws < 1:
            raise ConfigError(f"rr_max_draws must be positive, got {cfg.rr_max_draws}")
    if cfg.phi is not None and m in ("COV", "ARCS-COV", "ARCS-COV-ADD") \
            and cfg.phi.kind != "cov":
        raise ConfigError(f"{m} steers by the cov-family feature map, got "
                          f"phi kind {cfg.phi.kind!r}")
    return cfg


def assignment_phi(config: TrialConfig) -> PhiSpec:
    if config.phi is not None and config.phi.kind == "cov":
        return config.phi
    return PhiSpec(kind="cov", weights=COV_WEIGHTS)


@dataclass
class TrialState:
    """Everything revealed or decided during one trial."""

    config: TrialConfig
    covariates: np.ndarray
    assignments: np.ndarray
    outcomes: np.ndarray
    selected: tuple[int, ...] = ()
    imbalance: ImbalanceState | None = None
    batch_index: int = 0
    selection_history: list[tuple[int, ...]] = field(default_factory=list)
    stale_history: list[bool] = field(default_factory=list)
    rr_draws: int = 0

    @property
    def arm_sizes(self) -> tuple[int, int]:
        t = self.assignments
        return int(np.sum(t == 0)), int(np.sum(t == 1))


def _default_rngs(config, rng, select_rng):
    if rng is None:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed, 0])))
    if select_rng is None:
        select_rng = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([config.seed, 1])))
    return rng, select_rng


def _fresh_state(config, covariates) -> TrialState:
    x = np.ascontiguousarray(covariates, dtype=np.float64)
    if x.shape != (config.n, config.p):
        raise ConfigError(
            f"covariate matrix shape {x.shape} does not match (n, p)=({config.n}, {config.p})")
    if not np.all(np.isfinite(x)):
        raise ConfigError("covariate matrix contains non-finite values")
    return TrialState(
        config=config,
        covariates=x,
        assignments=np.full(config.n, -1, dtype=np.int8),
        outcomes=np.full(config.n, np.nan),
    )


def biased_coin(delta: float, rho: float, rng, scale: float = 1.0) -> int:
    """Assign arm 1 with probability rho if it lowers the imbalance.

    delta is Imb(arm 1) - Imb(arm 0) for the pending patient; |delta| within
    1e-12 of the combined magnitude `scale` counts as a tie and the coin is
    fair. One uniform is consumed per call.
    """
    if not (0.5 < rho < 1.0):
        raise ConfigError(f"rho must lie in (0.5, 1), got {rho}")
    if abs(delta) <= TIE_EPS * scale:
        p1 = 0.5
    elif delta < 0.0:
        p1 = rho
    else:
        p1 = 1.0 - rho
    return 1 if rng.random() < p1 else 0


def _burn_in(state: TrialState, oracle, rng) -> None:
    """Assign the first N0 patients in balanced pairs, (1,0) or (0,1) each w.p. 1/2."""
    x, t, y = state.covariates, state.assignments, state.outcomes
    for i in range(0, state.config.n0, 2):
        first = 1 if rng.random() < 0.5 else 0
        t[i] = first
        t[i + 1] = 1 - first
        y[i] = oracle(x[i], int(t[i]))
        y[i + 1] = oracle(x[i + 1], int(t[i + 1]))


def _refit(state: TrialState, upto: int, select_rng) -> None:
    """Refit the working set on the first `upto` patients; stale on failure."""
    cfg = state.config
    try:
        res = arcs_select(
            state.covariates[:upto], state.assignments[:upto], state.outcomes[:upto],
            mode=cfg.selection_mode, cv_folds=cfg.cv_folds, rng=select_rng,
            previous=state.selected, grid_size=cfg.cv_grid_size, rule=cfg.cv_rule,
            basis=BasisSpec(degree=cfg.basis_degree), zero_tol=cfg.zero_tol)
        selected, stale = res.selected, res.stale
    except ArcsError as exc:
        log.info("selection refit failed at patient %d, keeping stale set: %s", upto, exc)
        selected, stale = state.selected, True
    state.selected = tuple(selected)
    state.selection_history.append(state.selected)
    state.stale_history.append(stale)


def run_arcs(config: TrialConfig, covariates, outcome_oracle, rng=None,
             select_rng=None, _fixed_selection: tuple[int, ...] | None = None) -> TrialState:
    """Batched adaptive assignment steered by the quadratic feature imbalance.

    After the paired burn-in, the working set is fit on the observed
    outcomes, and each later patient is assigned by a biased coin on the
    sign of the imbalance change, with a refit after every batch (including
    the last, which feeds the selection trajectory but no assignment).
    Passing `_fixed_selection` pins the working set and disables refits,
    which is exactly the non-selecting COV competitor.
    """
    config = validate(config)
    rng, select_rng = _default_rngs(config, rng, select_rng)
    state = _fresh_state(config, covariates)
    spec = assignment_phi(config)
    x, t, y = state.covariates, state.assignments, state.outcomes
    _burn_in(state, outcome_oracle, rng)

    if _fixed_selection is None:
        _refit(state, config.n0, select_rng)
    else:
        state.selected = tuple(_fixed_selection)
    state.imbalance = rebuild_state(x[:config.n0], t[:config.n0], state.selected, spec)

    start = config.n0
    while start < config.n:
        end = min(start + config.batch_size, config.n) if _fixed_selection is None \
            else config.n
        for i in range(start, end):
            xi = x[i]
            phi = phi_cov(xi[list(state.selected)], spec)
            delta = imb_delta(state.imbalance, phi)
            arm = biased_coin(delta, config.rho, rng, tie_scale(state.imbalance, phi))
            t[i] = arm
            state.imbalance = update_lambda(state.imbalance, arm, phi)
            y[i] = outcome_oracle(xi, arm)
        start = end
        if _fixed_selection is None:
            state.batch_index += 1
            prev = state.selected
            _refit(state, start, select_rng)
            if state.selected != prev:
                state.imbalance = rebuild_state(x[:start], t[:start], state.selected, spec)
    return state


def _pair_imbalances(x_sel: np.ndarray, t_known: np.ndarray, i: int,
                     tol_ratio: float) -> tuple[float, float]:
    """Imb^M after assigning pair (i, i+1) under both orientations.

    x_sel holds the k = i + 2 revealed rows restricted to the working set;
    the covariance (and its pseudo-inverse) is shared by both orientations,
    only the arm means differ.
    """
    k, s = x_sel.shape
    if s == 0:
        return 0.0, 0.0
    sp = pinv(sample_cov(x_sel, ddof=1), tol_ratio)
    known1 = t_known[:i] == 1
    sum1 = x_sel[:i][known1].sum(axis=0)
    sum_all = x_sel.sum(axis=0)
    n1_known = int(known1.sum())
    out = []
    for first in (1, 0):
        row1 = x_sel[i] if first == 1 else x_sel[i + 1]
        s1 = sum1 + row1
        n1 = n1_known + 1
        n0 = k - n1
        d = s1 / n1 - (sum_all - s1) / n0
        out.append(0.5 * k * float(d @ sp @ d))
    return out[0], out[1]


def run_arcs_m(config: TrialConfig, covariates, outcome_oracle, rng=None,
               select_rng=None, _fixed_selection: tuple[int, ...] | None = None) -> TrialState:
    """Batched adaptive assignment steered by the pairwise Mahalanobis imbalance.

    Patients after the burn-in arrive in pairs; both pair members' covariates
    are revealed, the orientation that lowers the Mahalanobis imbalance over
    the k revealed rows is favored by the biased coin, and the second member
    takes the opposite arm. Refits run at batch boundaries exactly as in
    `run_arcs`. Passing `_fixed_selection` pins the working set, which is the
    ARM competitor.
    """
    config = validate(config)
    rng, select_rng = _default_rngs(config, rng, select_rng)
    state = _fresh_state(config, covariates)
    x, t, y = state.covariates, state.assignments, state.outcomes
    _burn_in(state, outcome_oracle, rng)

    if _fixed_selection is None:
        _refit(state, config.n0, select_rng)
    else:
        state.selected = tuple(_fixed_selection)

    start = config.n0
    while start < config.n:
        end = min(start + config.batch_size, config.n) if _fixed_selection is None \
            else config.n
        for i in range(start, end, 2):
            k = i + 2
            x_sel = x[:k][:, list(state.selected)]
            imb1, imb0 = _pair_imbalances(x_sel, t[:k], i, config.pinv_tol_ratio)
            delta = imb1 - imb0
            first = biased_coin(delta, config.rho, rng, 1.0 + abs(imb1) + abs(imb0))
            t[i] = first
            t[i + 1] = 1 - first
            y[i] = outcome_oracle(x[i], int(t[i]))
            y[i + 1] = outcome_oracle(x[i + 1], int(t[i + 1]))
        start = end
        if _fixed_selection is None:
            state.batch_index += 1
            _refit(state, start, select_rng)
    return state


def run_cr(config: TrialConfig, covariates, outcome_oracle, rng=None) -> TrialState:
    """Complete randomization: one independent fair coin per patient."""
    config = validate(config)
    rng, _ = _default_rngs(config, rng, None)
    state = _fresh_state(config, covariates)
    x, t, y = state.covariates, state.assignments, state.outcomes
    for i in range(config.n):
        t[i] = 1 if rng.random() < 0.5 else 0
        y[i] = outcome_oracle(x[i], int(t[i]))
    return state


def rr_threshold(p: int, accept_prob: float) -> float:
    """Chi-square quantile used as the rerandomization acceptance cutoff."""
    return float(stats.chi2.ppf(accept_prob, df=p))


def run_rr(config: TrialConfig, covariates, outcome_oracle, rng=None) -> TrialState:
    """Rerandomization: redraw balanced splits until the Mahalanobis statistic
    clears the chi-square threshold.

    The acceptance statistic is (n1 n0 / n) d' S^+ d over all p covariates,
    whose null distribution is approximately chi-square with p degrees of
    freedom, so `rr_accept_prob` is (approximately) the per-draw acceptance
    probability. One permutation is consumed per redraw.
    """
    config = validate(config)
    rng, _ = _default_rngs(config, rng, None)
    state = _fresh_state(config, covariates)
    x, t, y = state.covariates, state.assignments, state.outcomes
    n, half = config.n, config.n // 2
    cutoff = rr_threshold(config.p, config.rr_accept_prob)
    sp = pinv(sample_cov(x, ddof=1), config.pinv_tol_ratio)
    col_sum = x.sum(axis=0)
    for draw in range(1, config.rr_max_draws + 1):
        arm1 = rng.permutation(n)[:half]
        s1 = x[arm1].sum(axis=0)
        d = s1 / half - (col_sum - s1) / (n - half)
        m_stat = 0.25 * n * float(d @ sp @ d)
        if m_stat < cutoff:
            state.rr_draws = draw
            break
    else:
        raise DrawBudgetError(
            f"rerandomization used all {config.rr_max_draws} redraws without "
            f"clearing the threshold {cutoff:.4g} (p={config.p}, n={n})")
    t[:] = 0
    t[arm1] = 1
    for i in range(n):
        y[i] = outcome_oracle(x[i], int(t[i]))
    return state


def run_cov(config: TrialConfig, covariates, outcome_oracle, rng=None) -> TrialState:
    """Non-selecting competitor of run_arcs: feature-map coin over all p covariates."""
    config = validate(config)
    return run_arcs(config, covariates, outcome_oracle, rng=rng,
                    _fixed_selection=tuple(range(config.p)))


def run_arm(config: TrialConfig, covariates, outcome_oracle, rng=None) -> TrialState:
    """Non-selecting competitor of run_arcs_m: pairwise Mahalanobis over all p."""
    config = validate(config)
    return run_arcs_m(config, covariates, outcome_oracle, rng=rng,
                      _fixed_selection=tuple(range(config.p)))


_RUNNERS = {
    "CR": run_cr,
    "RR": run_rr,
    "ARM": run_arm,
    "COV": run_cov,
}


def run_trial(config: TrialConfig, covariates, outcome_oracle, rng=None,
              select_rng=None) -> TrialState:
    """Dispatch to the configured method's run function."""
    method = canonical_method(config.method)
    if method in _RUNNERS:
        return _RUNNERS[method](config, covariates, outcome_oracle, rng=rng)
    if method in ("ARCS-COV", "ARCS-COV-ADD"):
        return run_arcs(config, covariates, outcome_oracle, rng=rng, select_rng=select_rng)
    return run_arcs_m(config, covariates, outcome_oracle, rng=rng, select_rng=select_rng)
