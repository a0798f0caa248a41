"""Command line interface.

Subcommands: `run` (one replication, human-readable metrics), `table`
(replication study, CSV outputs plus an aligned console table), `calibrate`
(fit an outcome model to a dataset, then a study on pseudo-trials), and
`selftest` (fast built-in invariant checks).

Configuration comes from an optional JSON file (--config) overridden by
flags. Errors print a single machine-parsable line to stderr of the form
ARCS-ERROR code=<code> message="...", and the exit code is 0 only when every
requested run completed. The ARCS_LOG environment variable (error, info,
debug) controls log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .balance import PhiSpec
from .calibrate import make_calibrated_example
from .engine import METHODS, TrialConfig, canonical_method, validate
from .errors import (ArcsError, CalibrationError, ConfigError, ConvergenceError,
                     DecompositionError, DrawBudgetError, ReplicationError)
from .simulate import (ExampleDef, make_example, run_study, write_per_rep_csv,
                       write_summary_csv, write_trajectory_csv)

log = logging.getLogger("arcslab")

ERROR_CODES = (
    (ConfigError, "config"),
    (CalibrationError, "calibration"),
    (DrawBudgetError, "draw-budget"),
    (ConvergenceError, "convergence"),
    (DecompositionError, "numeric"),
    (ReplicationError, "replication"),
    (ArcsError, "error"),
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved invocation: scenario, methods, overrides, outputs."""

    example: str = "1a"
    methods: tuple[str, ...] = ("cr",)
    n: int | None = None
    p: int | None = None
    n0: int = 30
    batch_size: int = 10
    rho: float = 0.85
    weights: tuple[float, ...] | None = None
    reps: int = 200
    seed: int = 42
    threads: int = 1
    out: str = "."
    form: str = "linear"
    data: str | None = None
    outcome_column: str = "outcome"
    arm_column: str | None = None
    covariate_columns: tuple[str, ...] = ()
    cv_folds: int = 5
    cv_grid_size: int | None = None
    cv_rule: str = "min"


_LIST_KEYS = {"methods", "weights", "covariate_columns"}


def spec_to_json(spec: ExperimentSpec) -> dict:
    """Canonical JSON form of a spec (tuples as lists, all keys present)."""
    out = {}
    for key, value in asdict(spec).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def parse_config(config_path: str | None, overrides: dict) -> ExperimentSpec:
    """Merge a JSON config file with flag overrides (flags win)."""
    merged: dict = {}
    if config_path:
        try:
            with open(config_path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        merged.update(loaded)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(ExperimentSpec)}
    for key in merged:
        if key not in known:
            raise ConfigError(f"config key {key!r}: unknown (valid keys: "
                              f"{', '.join(sorted(known))})")
    for key in _LIST_KEYS & merged.keys():
        if merged[key] is not None:
            merged[key] = tuple(merged[key])
    try:
        spec = ExperimentSpec(**merged)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if not spec.methods:
        raise ConfigError("config key 'methods': at least one method required")
    for m in spec.methods:
        canonical_method(m)
    if spec.reps < 1:
        raise ConfigError(f"config key 'reps': must be positive, got {spec.reps}")
    if spec.threads < 1:
        raise ConfigError(f"config key 'threads': must be positive, got {spec.threads}")
    return spec


def _phi_from_weights(weights) -> PhiSpec | None:
    if weights is None:
        return None
    w = tuple(float(v) for v in weights)
    if len(w) == 3:
        return PhiSpec(kind="cov", weights=w)
    if len(w) == 2:
        return PhiSpec(kind="mahalanobis", weights=w)
    raise ConfigError(f"config key 'weights': expected 2 or 3 values, got {len(w)}")


def build_example(spec: ExperimentSpec) -> ExampleDef:
    overrides = {
        "n0": spec.n0,
        "batch_size": spec.batch_size,
        "rho": spec.rho,
        "cv_folds": spec.cv_folds,
        "cv_rule": spec.cv_rule,
        "seed": spec.seed,
    }
    phi = _phi_from_weights(spec.weights)
    if phi is not None:
        overrides["phi"] = phi
    if spec.cv_grid_size is not None:
        overrides["cv_grid_size"] = spec.cv_grid_size
    if spec.example == "calibrated":
        if not spec.data:
            raise ConfigError("the calibrated example needs --data pointing at a CSV")
        return make_calibrated_example(
            spec.data, spec.outcome_column,
            covariate_columns=list(spec.covariate_columns) or None,
            form=spec.form, arm_column=spec.arm_column, **overrides)
    return make_example(spec.example, n=spec.n, p=spec.p, **overrides)


def _validate_all(example: ExampleDef, spec: ExperimentSpec) -> None:
    from dataclasses import replace
    for method in spec.methods:
        validate(replace(example.config, method=method))


def render_table(results) -> str:
    """Aligned console table, two decimals per numeric cell."""
    header = ["method", "n", "p", "reps", "imb_m", "dncm", "dnc", "imb_phi",
              "tau", "sd(tau)*sqrt(n)", "tpr", "fpr"]
    rows = [header]
    for res in results:
        s = res.summary
        m = s.metric_means
        rows.append([
            s.method.lower(), str(s.n), str(s.p), str(s.reps),
            f"{m['imb_m']:.2f}", f"{m['dncm']:.2f}", f"{m['dnc']:.2f}",
            f"{m['imb_phi']:.2f}", f"{s.tau_mean:.2f}", f"{s.tau_sd_scaled:.2f}",
            f"{s.tpr_final:.2f}" if s.tpr else "-",
            f"{s.fpr_final:.2f}" if s.fpr else "-",
        ])
    widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
    lines = []
    for r in rows:
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
    return "\n".join(lines)


def cmd_table(spec: ExperimentSpec) -> int:
    example = build_example(spec)
    _validate_all(example, spec)
    results = run_study(example, spec.methods, spec.reps, spec.seed,
                        workers=spec.threads)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out / "summary.csv", results)
    write_per_rep_csv(out / "per_rep.csv", results)
    write_trajectory_csv(out / "trajectory.csv", results)
    print(render_table(results))
    print(f"wrote {out / 'summary.csv'}, {out / 'per_rep.csv'}, "
          f"{out / 'trajectory.csv'}")
    return 0


def cmd_run(spec: ExperimentSpec) -> int:
    from .simulate import _one_replication
    example = build_example(spec)
    _validate_all(example, spec)
    from dataclasses import replace
    for method in spec.methods:
        cfg = replace(example.config, method=method)
        metrics, rr_draws = _one_replication(cfg, example.model, example.covariates,
                                             example.true_set, spec.seed, 0)
        print(f"method={method.lower()} n={cfg.n} p={cfg.p} seed={spec.seed}")
        print(f"  imb_m={metrics.imb_m:.4f} dncm={metrics.dncm:.4f} "
              f"dnc={metrics.dnc:.4f} imb_phi={metrics.imb_phi:.4f}")
        print(f"  tau_hat={metrics.tau:.4f} wall_s={metrics.wall_time:.3f}"
              + (f" rr_draws={rr_draws}" if canonical_method(method) == "RR" else ""))
        if metrics.tpr:
            print(f"  tpr_final={metrics.tpr[-1]:.3f} fpr_final={metrics.fpr[-1]:.3f}")
    return 0


def cmd_calibrate(spec: ExperimentSpec) -> int:
    spec = ExperimentSpec(**{**asdict(spec), "example": "calibrated"})
    example = build_example(spec)
    model = example.model
    cols = ", ".join(str(j) for j in model.feature_columns)
    print(f"calibrated {model.feature_form} model on columns [{cols}] "
          f"mu0={model.mu0:.3f} mu1={model.mu1:.3f} n={example.config.n}")
    _validate_all(example, spec)
    results = run_study(example, spec.methods, spec.reps, spec.seed,
                        workers=spec.threads)
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(out / "summary.csv", results)
    write_per_rep_csv(out / "per_rep.csv", results)
    write_trajectory_csv(out / "trajectory.csv", results)
    print(render_table(results))
    return 0


def cmd_selftest(_: ExperimentSpec) -> int:
    failures = 0
    for name, check in _SELFTESTS:
        try:
            check()
            print(f"selftest {name}: ok")
        except Exception as exc:  # noqa: BLE001
            failures += 1
            print(f"selftest {name}: FAIL ({exc})")
    return 1 if failures else 0


def _st_pinv():
    from .numerics import pinv
    rng = np.random.default_rng(7)
    for _ in range(25):
        k = int(rng.integers(2, 12))
        b = rng.standard_normal((k, k))
        a = b @ b.T
        ap = pinv(a)
        if np.max(np.abs(a @ ap @ a - a)) > 1e-8:
            raise AssertionError("Penrose identity violated")


def _st_lasso_kkt():
    from .selection import cv_lambda, kkt_violation, lasso_fit
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.standard_normal((30, 8))
        y = x[:, 0] * 2 - x[:, 3] + rng.standard_normal(30)
        lam = float(rng.uniform(0.01, 0.5))
        fit = lasso_fit(x, y, lam)
        if kkt_violation(x, y, fit) > 1e-6:
            raise AssertionError("KKT residual too large")


def _st_imb_identity():
    from .balance import PhiSpec, imb_delta, new_state, update_lambda
    rng = np.random.default_rng(3)
    spec = PhiSpec()
    state = new_state((0, 1, 2), spec)
    for _ in range(50):
        phi = rng.standard_normal(state.lambda_vec.shape[0])
        lhs = imb_delta(state, phi)
        plus = state.lambda_vec + phi
        minus = state.lambda_vec - phi
        rhs = float(plus @ plus - minus @ minus)
        if abs(lhs - rhs) > 1e-9 * max(1.0, abs(rhs)):
            raise AssertionError("delta identity violated")
        state = update_lambda(state, int(rng.integers(0, 2)), phi)


def _st_coin():
    from .engine import biased_coin
    rng = np.random.default_rng(5)
    hits = sum(biased_coin(-1.0, 0.85, rng) for _ in range(20000))
    if abs(hits / 20000 - 0.85) > 0.03:
        raise AssertionError("biased coin off calibration")


def _st_determinism():
    from .simulate import make_example, run_study
    ex = make_example("1a", n=40, p=6, n0=10, batch_size=10, cv_grid_size=10)
    a = run_study(ex, ("arcs-cov",), reps=2, seed=9)[0]
    b = run_study(ex, ("arcs-cov",), reps=2, seed=9)[0]
    if a.summary.metric_means != b.summary.metric_means:
        raise AssertionError("same seed produced different summaries")


_SELFTESTS = (
    ("pinv-penrose", _st_pinv),
    ("lasso-kkt", _st_lasso_kkt),
    ("imbalance-delta-identity", _st_imb_identity),
    ("biased-coin-calibration", _st_coin),
    ("determinism", _st_determinism),
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcs",
        description="Covariate-adaptive randomization laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run a single replication and print its metrics"),
        ("table", "run a replication study and emit CSV tables"),
        ("calibrate", "calibrate an outcome model to a CSV, then run a study"),
        ("selftest", "run fast built-in invariant checks"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (flags take precedence)")
        p.add_argument("--example", choices=["1a", "1b", "2", "3", "4", "calibrated"])
        p.add_argument("--methods", help="comma-separated: " +
                       ",".join(m.lower() for m in METHODS))
        p.add_argument("--n", type=int)
        p.add_argument("--p", type=int)
        p.add_argument("--N0", dest="n0", type=int)
        p.add_argument("--N", dest="batch_size", type=int)
        p.add_argument("--rho", type=float)
        p.add_argument("--weights", help="comma-separated feature-map weights")
        p.add_argument("--reps", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out")
        p.add_argument("--form", choices=["linear", "quadratic"])
        p.add_argument("--data")
        p.add_argument("--outcome-column", dest="outcome_column")
        p.add_argument("--arm-column", dest="arm_column")
        p.add_argument("--covariates", dest="covariate_columns",
                       help="comma-separated model covariate names (calibrate)")
        p.add_argument("--cv-folds", dest="cv_folds", type=int)
        p.add_argument("--grid-size", dest="cv_grid_size", type=int)
        p.add_argument("--cv-rule", dest="cv_rule", choices=["min", "1se"])
    return parser


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("ARCS_LOG", "error").lower())
    if level is None:
        print('ARCS-ERROR code=config message="ARCS_LOG must be error, info or debug"',
              file=sys.stderr)
        level = logging.ERROR
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _error_line(code: str, message: str) -> str:
    msg = message.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    return f'ARCS-ERROR code={code} message="{msg}"'


def main(argv=None) -> int:
    _setup_logging()
    args = _build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items()
                 if k not in ("command", "config") and v is not None}
    for key in ("methods", "weights", "covariate_columns"):
        if key in overrides:
            overrides[key] = tuple(s.strip() for s in str(overrides[key]).split(",") if s.strip())
    if "weights" in overrides:
        overrides["weights"] = tuple(float(v) for v in overrides["weights"])
    commands = {"run": cmd_run, "table": cmd_table, "calibrate": cmd_calibrate,
                "selftest": cmd_selftest}
    try:
        spec = parse_config(getattr(args, "config", None), overrides)
        return commands[args.command](spec)
    except ArcsError as exc:
        code = next(c for cls, c in ERROR_CODES if isinstance(exc, cls))
        print(_error_line(code, str(exc)), file=sys.stderr)
        log.debug("traceback", exc_info=exc)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(_error_line("internal", f"{type(exc).__name__}: {exc}"), file=sys.stderr)
        log.debug("traceback", exc_info=exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
