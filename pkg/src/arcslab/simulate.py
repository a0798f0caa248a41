"""Data generation, outcome models, and the Monte Carlo harness.

A replication study runs one (config, outcome model, covariate source)
triple for `reps` independent replications and aggregates end-of-trial
metrics. Each replication owns four counter-based random streams spawned
from SeedSequence([master_seed, rep]): covariate draws, outcome noise,
assignment decisions, and cross-validation fold shuffles, in that spawn
order. This makes every replication reproducible in isolation and makes
the aggregate independent of how replications are spread over workers.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from math import sqrt

import numpy as np
from threadpoolctl import threadpool_limits

from .balance import RunMetrics, report_metrics
from .engine import TrialConfig, TrialState, assignment_phi, run_trial, validate
from .errors import ConfigError, ReplicationError
from .numerics import chol_lower

log = logging.getLogger("arcslab")

METRIC_NAMES = ("imb_m", "dncm", "dnc", "imb_phi", "tau")
FAILURE_BUDGET = 0.01


# ---------------------------------------------------------------------------
# covariate sources
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CovariateSpec:
    """Where covariate rows come from.

    kind "ar1": N(0, Sigma) with Sigma_ij = corr^|i-j|.
    kind "mixed": first p-4 columns as in "ar1", last 4 the one-hot coding
        of two independent Bernoulli(1/2) factors.
    kind "table": rows resampled without replacement from a fixed matrix
        (order reshuffled per replication).
    """

    kind: str = "ar1"
    corr: float = 0.5
    table: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("ar1", "mixed", "table"):
            raise ConfigError(f"unknown covariate source {self.kind!r}")
        if self.kind == "table" and self.table is None:
            raise ConfigError("table covariate source needs a table")


def ar1_sigma(p: int, corr: float) -> np.ndarray:
    idx = np.arange(p)
    return corr ** np.abs(idx[:, None] - idx[None, :])


def gen_gaussian_ar1(n: int, p: int, corr: float, rng) -> np.ndarray:
    """Draw n rows of N(0, Sigma) with AR(1) correlation via Cholesky."""
    lower = chol_lower(ar1_sigma(p, corr))
    return rng.standard_normal((n, p)) @ lower.T


def gen_mixed(n: int, p: int, corr: float, rng) -> np.ndarray:
    """AR(1) Gaussian block plus the one-hot coding of two binary factors.

    The last four columns indicate (Z1, Z2) = (1,1), (1,0), (0,1), (0,0)
    for independent Bernoulli(1/2) factors Z1, Z2.
    """
    if p < 5:
        raise ConfigError(f"mixed covariates need p >= 5, got {p}")
    x = np.zeros((n, p))
    x[:, : p - 4] = gen_gaussian_ar1(n, p - 4, corr, rng)
    z1 = rng.random(n) < 0.5
    z2 = rng.random(n) < 0.5
    x[:, p - 4] = z1 & z2
    x[:, p - 3] = z1 & ~z2
    x[:, p - 2] = ~z1 & z2
    x[:, p - 1] = ~z1 & ~z2
    return x


def generate_covariates(spec: CovariateSpec, n: int, p: int, rng) -> np.ndarray:
    if spec.kind == "ar1":
        return gen_gaussian_ar1(n, p, spec.corr, rng)
    if spec.kind == "mixed":
        return gen_mixed(n, p, spec.corr, rng)
    table = np.asarray(spec.table, dtype=np.float64)
    if table.shape[0] < n or table.shape[1] != p:
        raise ConfigError(
            f"covariate table of shape {table.shape} cannot supply (n, p)=({n}, {p})")
    return table[rng.permutation(table.shape[0])[:n]]


# ---------------------------------------------------------------------------
# outcome models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutcomeModel:
    """Additive treatment-effect outcome: y = mu(arm) + signal(x) + noise.

    kinds: "linear" / "mixed_discrete" (linear signal x' beta),
    "additive_nonlinear" (four fixed smooth components on the first four
    covariates), "quadratic_phi" (quadratic in the first two covariates),
    and "calibrated" (features rebuilt from a fitted real-data model).
    """

    kind: str = "linear"
    beta: np.ndarray | None = None
    mu0: float = 0.0
    mu1: float = 1.0
    noise_sd: float = 1.0
    feature_columns: tuple[int, ...] = ()
    feature_form: str = "linear"
    square_columns: tuple[int, ...] = ()

    def __post_init__(self):
        kinds = ("linear", "mixed_discrete", "additive_nonlinear", "quadratic_phi",
                 "calibrated")
        if self.kind not in kinds:
            raise ConfigError(f"unknown outcome model kind {self.kind!r}")
        if self.kind in ("linear", "mixed_discrete", "calibrated") and self.beta is None:
            raise ConfigError(f"{self.kind} outcome model needs coefficients")


def calibration_features(x_sub: np.ndarray, form: str,
                         square_columns: tuple[int, ...]) -> np.ndarray:
    """Feature block used by calibrated models: columns, optional squares,
    and all pairwise interactions."""
    x_sub = np.atleast_2d(np.asarray(x_sub, dtype=np.float64))
    cols = [x_sub]
    if form == "quadratic":
        for j in square_columns:
            cols.append(x_sub[:, j:j + 1] ** 2)
        k = x_sub.shape[1]
        for a in range(k):
            for b in range(a + 1, k):
                cols.append((x_sub[:, a] * x_sub[:, b])[:, None])
    return np.hstack(cols)


def signal(model: OutcomeModel, x: np.ndarray) -> float:
    """Noise-free covariate contribution to the outcome."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if model.kind in ("linear", "mixed_discrete"):
        return float(x @ model.beta)
    if model.kind == "additive_nonlinear":
        return float(-2.0 * np.sin(2.0 * x[0]) + (x[1] ** 2 - 1.0 / 3.0)
                     + (x[2] - 0.5) + (np.exp(-x[3]) + np.exp(-1.0) - 1.0))
    if model.kind == "quadratic_phi":
        return float(3.0 * (x[0] + x[1] + x[0] ** 2 + x[1] ** 2 + x[0] * x[1]))
    feats = calibration_features(x[list(model.feature_columns)][None, :],
                                 model.feature_form, model.square_columns)
    return float(feats[0] @ model.beta)


def outcome(model: OutcomeModel, x: np.ndarray, arm: int, rng) -> float:
    """One observed outcome; draws one normal deviate from `rng`."""
    mu = model.mu1 if arm == 1 else model.mu0
    return mu + signal(model, x) + float(rng.normal(0.0, model.noise_sd))


def tau_hat(state: TrialState) -> float:
    """Difference-in-means treatment effect estimate."""
    t = state.assignments
    y = state.outcomes
    return float(y[t == 1].mean() - y[t == 0].mean())


# ---------------------------------------------------------------------------
# example presets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExampleDef:
    """One benchmark scenario: config template, model, source, reference set."""

    example_id: str
    config: TrialConfig
    model: OutcomeModel
    covariates: CovariateSpec
    true_set: tuple[int, ...]


def _sparse_linear_beta(p: int) -> np.ndarray:
    if p < 5:
        raise ConfigError(f"the linear benchmark needs p >= 5, got {p}")
    beta = np.zeros(p)
    beta[[0, 1, 4]] = (3.0, 1.5, 2.0)
    return beta


def _mixed_beta(p: int) -> np.ndarray:
    if p < 9:
        raise ConfigError(f"the mixed benchmark needs p >= 9, got {p}")
    beta = _sparse_linear_beta(p)
    beta[p - 4] = 1.0
    return beta


EXAMPLE_IDS = ("1a", "1b", "2", "3", "4", "calibrated")


def make_example(example_id: str, n: int | None = None, p: int | None = None,
                 **config_overrides) -> ExampleDef:
    """Build a benchmark scenario by id, optionally overriding n, p, or any
    TrialConfig field. The method is left at the config default and is
    normally replaced per run by the study driver."""
    ex = str(example_id).lower()
    if ex not in EXAMPLE_IDS:
        raise ConfigError(f"unknown example {example_id!r}; choose from {EXAMPLE_IDS}")
    if ex == "calibrated":
        raise ConfigError(
            "the calibrated example is built from data; use make_calibrated_example")
    if ex in ("1a", "1b"):
        n = n or 120
        p = p or (10 if ex == "1a" else 150)
        model = OutcomeModel(kind="linear", beta=_sparse_linear_beta(p))
        cov = CovariateSpec(kind="ar1")
        true_set = (0, 1, 4)
        defaults = {}
    elif ex == "2":
        n = n or 120
        p = p or 150
        model = OutcomeModel(kind="mixed_discrete", beta=_mixed_beta(p))
        cov = CovariateSpec(kind="mixed")
        true_set = (0, 1, 4, p - 4)
        defaults = {}
    elif ex == "3":
        n = n or 300
        p = p or 150
        model = OutcomeModel(kind="additive_nonlinear")
        cov = CovariateSpec(kind="ar1")
        true_set = (0, 1, 2, 3)
        defaults = {"cv_grid_size": 50, "batch_size": 30}
    else:
        n = n or 300
        p = p or 150
        model = OutcomeModel(kind="quadratic_phi")
        cov = CovariateSpec(kind="ar1")
        true_set = (0, 1)
        defaults = {"cv_grid_size": 50, "batch_size": 30}
    cfg = TrialConfig(n=n, p=p, **{**defaults, **config_overrides})
    return ExampleDef(example_id=ex, config=cfg, model=model, covariates=cov,
                      true_set=tuple(true_set))


# ---------------------------------------------------------------------------
# replication harness
# ---------------------------------------------------------------------------

@dataclass
class ReplicationSummary:
    """Aggregate of one (method, scenario) replication study."""

    method: str
    example_id: str
    n: int
    p: int
    batch_size: int
    reps: int
    failures: int
    metric_means: dict[str, float]
    tau_mean: float
    tau_sd_scaled: float
    tpr: tuple[float, ...]
    fpr: tuple[float, ...]
    mean_time_s: float
    rr_draws_mean: float = 0.0

    @property
    def tpr_final(self) -> float:
        return self.tpr[-1] if self.tpr else float("nan")

    @property
    def fpr_final(self) -> float:
        return self.fpr[-1] if self.fpr else float("nan")


@dataclass
class ReplicationResult:
    summary: ReplicationSummary
    records: list[dict]
    trajectories: list[dict]


def _rep_streams(master_seed: int, rep: int):
    root = np.random.SeedSequence([master_seed, rep])
    children = root.spawn(4)
    return tuple(np.random.Generator(np.random.Philox(ss)) for ss in children)


def _one_replication(config: TrialConfig, model: OutcomeModel, cov_spec: CovariateSpec,
                     true_set, master_seed: int, rep: int):
    cov_rng, noise_rng, assign_rng, select_rng = _rep_streams(master_seed, rep)
    x = generate_covariates(cov_spec, config.n, config.p, cov_rng)

    def oracle(row, arm):
        return outcome(model, row, arm, noise_rng)

    started = time.perf_counter()
    state = run_trial(config, x, oracle, rng=assign_rng, select_rng=select_rng)
    wall = time.perf_counter() - started
    metrics = report_metrics(state, true_set, phi_spec=assignment_phi(config))
    metrics.wall_time = wall
    return metrics, state.rr_draws


def _worker(payload):
    """Run one replication behind a single-thread BLAS limit; never raises."""
    config, model, cov_spec, true_set, master_seed, rep, fail_reps = payload
    try:
        if rep in fail_reps:
            raise RuntimeError(f"injected fault in replication {rep}")
        with threadpool_limits(limits=1):
            metrics, rr_draws = _one_replication(config, model, cov_spec, true_set,
                                                 master_seed, rep)
        return rep, metrics, rr_draws, None
    except Exception as exc:  # noqa: BLE001, isolation is the point here
        return rep, None, 0, f"{type(exc).__name__}: {exc}"


def replicate(config: TrialConfig, model: OutcomeModel, reps: int, seed: int,
              workers: int = 1, covariates: CovariateSpec | None = None,
              true_set: tuple[int, ...] = (), example_id: str = "",
              _fail_reps: frozenset = frozenset()) -> ReplicationResult:
    """Run `reps` independent replications and aggregate.

    Failed replications are isolated and excluded; more than 1% of them
    failing raises ReplicationError. The aggregate is identical for any
    worker count because replication streams depend only on (seed, rep) and
    reduction happens in rep order.
    """
    if reps < 1:
        raise ConfigError(f"need at least one replication, got {reps}")
    config = validate(config)
    if covariates is None:
        covariates = CovariateSpec(kind="ar1")
    payloads = [(config, model, covariates, tuple(true_set), seed, rep, _fail_reps)
                for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(_worker, payloads, chunksize=max(1, reps // (4 * workers))))
    else:
        raw = [_worker(pl) for pl in payloads]
    raw.sort(key=lambda item: item[0])

    per_rep: list[tuple[int, RunMetrics, int]] = []
    errors: list[tuple[int, str]] = []
    for rep, metrics, rr_draws, err in raw:
        if err is None:
            per_rep.append((rep, metrics, rr_draws))
        else:
            log.warning("replication %d failed: %s", rep, err)
            errors.append((rep, err))
    if len(errors) > FAILURE_BUDGET * reps:
        detail = "; ".join(f"rep {r}: {e}" for r, e in errors[:5])
        raise ReplicationError(
            f"{len(errors)} of {reps} replications failed (budget {FAILURE_BUDGET:.0%}): "
            f"{detail}")
    if not per_rep:
        raise ReplicationError("all replications failed")

    method = config.method
    records = []
    trajectories = []
    for rep, metrics, _ in per_rep:
        for name in METRIC_NAMES:
            records.append({
                "rep": rep, "method": method, "example": example_id,
                "n": config.n, "p": config.p, "batch_size": config.batch_size,
                "metric": name, "value": getattr(metrics, name),
            })
        for b, (tpr, fpr) in enumerate(zip(metrics.tpr, metrics.fpr)):
            trajectories.append({"rep": rep, "method": method, "batch": b,
                                 "tpr": tpr, "fpr": fpr})

    taus = np.array([m.tau for _, m, _ in per_rep])
    means = {name: float(np.mean([getattr(m, name) for _, m, _ in per_rep]))
             for name in ("imb_m", "dncm", "dnc", "imb_phi")}
    traj_matrix = [m.tpr for _, m, _ in per_rep if m.tpr]
    if traj_matrix:
        tpr_mean = tuple(np.mean([t[b] for t in traj_matrix])
                         for b in range(len(traj_matrix[0])))
        fprs = [m.fpr for _, m, _ in per_rep if m.fpr]
        fpr_mean = tuple(np.mean([f[b] for f in fprs]) for b in range(len(fprs[0])))
    else:
        tpr_mean = fpr_mean = ()
    summary = ReplicationSummary(
        method=method, example_id=example_id, n=config.n, p=config.p,
        batch_size=config.batch_size, reps=reps, failures=len(errors),
        metric_means=means, tau_mean=float(taus.mean()),
        tau_sd_scaled=float(sqrt(config.n) * taus.std(ddof=1)) if len(taus) > 1 else 0.0,
        tpr=tpr_mean, fpr=fpr_mean,
        mean_time_s=float(np.mean([m.wall_time for _, m, _ in per_rep])),
        rr_draws_mean=float(np.mean([d for _, _, d in per_rep])),
    )
    return ReplicationResult(summary=summary, records=records, trajectories=trajectories)


def run_study(example: ExampleDef, methods, reps: int, seed: int,
              workers: int = 1) -> list[ReplicationResult]:
    """Replicate one scenario under several methods with a shared seed.

    The shared seed couples the covariate and noise streams across methods
    (each replication sees the same patients under every design), which is
    the right coupling for method-to-method ratio comparisons.
    """
    results = []
    for method in methods:
        cfg = replace(example.config, method=method)
        results.append(replicate(cfg, example.model, reps, seed, workers=workers,
                                 covariates=example.covariates,
                                 true_set=example.true_set,
                                 example_id=example.example_id))
    return results


# ---------------------------------------------------------------------------
# CSV emission (the external interface of a study)
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    # repr of a Python float is shortest round-trip, stable across runs
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in header])


def write_per_rep_csv(path, results: list[ReplicationResult]) -> None:
    header = ["rep", "method", "example", "n", "p", "batch_size", "metric", "value"]
    rows = [row for res in results for row in res.records]
    _write_rows(path, header, rows)


def write_trajectory_csv(path, results: list[ReplicationResult]) -> None:
    header = ["rep", "method", "batch", "tpr", "fpr"]
    rows = [row for res in results for row in res.trajectories]
    _write_rows(path, header, rows)


def write_summary_csv(path, results: list[ReplicationResult]) -> None:
    header = ["method", "example", "n", "p", "batch_size", "reps", "failures",
              "imb_m", "dncm", "dnc", "imb_phi", "tau_mean", "tau_sd_scaled",
              "tpr_final", "fpr_final"]
    rows = []
    for res in results:
        s = res.summary
        rows.append({
            "method": s.method, "example": s.example_id, "n": s.n, "p": s.p,
            "batch_size": s.batch_size, "reps": s.reps, "failures": s.failures,
            "imb_m": s.metric_means["imb_m"], "dncm": s.metric_means["dncm"],
            "dnc": s.metric_means["dnc"], "imb_phi": s.metric_means["imb_phi"],
            "tau_mean": s.tau_mean, "tau_sd_scaled": s.tau_sd_scaled,
            "tpr_final": s.tpr_final, "fpr_final": s.fpr_final,
        })
    _write_rows(path, header, rows)
