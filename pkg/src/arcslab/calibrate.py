"""Calibrating outcome models to a real dataset and replaying them.

The workflow mirrors a pseudo-trial study: pick a small set of model
covariates (given explicitly or selected by cross-validated sparse
regression), fit their effect on the outcome by OLS together with per-arm
intercepts, then rerun the assignment procedures on the dataset's covariate
rows with outcomes regenerated from the fitted model plus unit-variance
noise. Patient arrival order is reshuffled once per replication.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np
from scipy import linalg as sla

from .engine import TrialConfig
from .errors import CalibrationError, ConfigError
from .selection import cv_lambda, intersect_supports, lasso_fit, support
from .simulate import CovariateSpec, ExampleDef, OutcomeModel, calibration_features

log = logging.getLogger("arcslab")

RANK_TOL = 1e-10


def load_table(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV with a header row.

    Every used cell must parse as a finite float; blanks, NaNs, and
    non-numeric cells are rejected outright rather than imputed.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise CalibrationError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise CalibrationError(
                    f"{path}:{lineno}: expected {len(names)} cells, got {len(row)}")
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise CalibrationError(
                    f"{path}:{lineno}: non-numeric cell {bad!r}") from None
            if not all(np.isfinite(vals)):
                col = names[int(np.argmin(np.isfinite(vals)))]
                raise CalibrationError(
                    f"{path}:{lineno}: missing or non-finite value in column {col!r}")
            rows.append(vals)
    if not rows:
        raise CalibrationError(f"{path}: no data rows")
    return [n.strip() for n in names], np.array(rows, dtype=np.float64)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def write_table_csv(path, names, matrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in np.asarray(matrix):
            writer.writerow([repr(float(v)) for v in row])


def _column(names: list[str], wanted: str) -> int:
    try:
        return names.index(wanted)
    except ValueError:
        raise CalibrationError(
            f"column {wanted!r} not found; available: {', '.join(names)}") from None


def _split_table(names, matrix, outcome_column, arm_column):
    y_idx = _column(names, outcome_column)
    arm_idx = _column(names, arm_column) if arm_column else None
    drop = {y_idx} | ({arm_idx} if arm_idx is not None else set())
    cov_idx = [j for j in range(len(names)) if j not in drop]
    cov_names = [names[j] for j in cov_idx]
    x = matrix[:, cov_idx]
    y = matrix[:, y_idx]
    t = None
    if arm_idx is not None:
        t = matrix[:, arm_idx]
        if not np.all(np.isin(t, (0.0, 1.0))):
            raise CalibrationError(f"arm column {arm_column!r} must be 0/1")
        t = t.astype(np.int8)
    return cov_names, x, y, t


def auto_select_columns(x, y, t, folds: int = 5) -> tuple[int, ...]:
    """Pick model covariates by cross-validated sparse regression.

    With an arm column, both arms are fit separately and the supports
    intersected (the same rule the sequential procedure uses); without one,
    a single fit's support is returned. The fold shuffle uses a fixed local
    seed so calibration is reproducible without threading a generator in.
    """
    rng = np.random.default_rng(0)
    if t is None:
        cv = cv_lambda(x, y, folds=folds, rng=rng)
        return support(lasso_fit(x, y, cv.best_lambda))
    sups = []
    for arm in (0, 1):
        mask = t == arm
        if mask.sum() < 3:
            raise CalibrationError(f"arm {arm} has fewer than 3 patients")
        cv = cv_lambda(x[mask], y[mask], folds=folds, rng=rng)
        sups.append(support(lasso_fit(x[mask], y[mask], cv.best_lambda, arm=arm)))
    return intersect_supports(*sups)


def _feature_names(cov_names, model_idx, form, square_local):
    base = [cov_names[j] for j in model_idx]
    out = list(base)
    if form == "quadratic":
        out += [f"{base[j]}^2" for j in square_local]
        k = len(base)
        out += [f"{base[a]}*{base[b]}" for a in range(k) for b in range(a + 1, k)]
    return out


def calibrate_pseudo_trial(data, outcome_column: str, covariate_columns=None,
                           form: str = "linear", arm_column: str | None = None) -> OutcomeModel:
    """Fit the generative outcome model used by calibrated pseudo-trials.

    `data` is a CSV path or a (names, matrix) pair. The design regresses the
    outcome on per-arm intercepts (a single intercept if no arm column) and
    the model covariates' feature block; the quadratic form adds squares of
    the non-binary model covariates and all pairwise interactions. A rank
    deficient design raises CalibrationError naming the collinear columns.
    Noise is fixed at unit standard deviation.
    """
    if form not in ("linear", "quadratic"):
        raise CalibrationError(f"unknown calibration form {form!r}")
    names, matrix = data if isinstance(data, tuple) else load_table(data)
    cov_names, x, y, t = _split_table(names, matrix, outcome_column, arm_column)
    if covariate_columns:
        model_idx = tuple(_column(cov_names, c) for c in covariate_columns)
    else:
        model_idx = tuple(auto_select_columns(x, y, t))
        if not model_idx:
            raise CalibrationError(
                "automatic covariate selection found no stable columns; pass "
                "covariate_columns explicitly")
        log.info("calibration selected columns: %s",
                 ", ".join(cov_names[j] for j in model_idx))
    x_model = x[:, list(model_idx)]
    square_local = tuple(j for j in range(x_model.shape[1])
                         if np.unique(x_model[:, j]).size > 2) if form == "quadratic" else ()
    feats = calibration_features(x_model, form, square_local)
    n, k = feats.shape
    if t is not None:
        design = np.column_stack([(t == 1).astype(float), (t == 0).astype(float), feats])
        lead_names = ["arm=1 intercept", "arm=0 intercept"]
    else:
        design = np.column_stack([np.ones(n), feats])
        lead_names = ["intercept"]
    if n < design.shape[1] + 2:
        raise CalibrationError(
            f"{n} rows cannot support {design.shape[1]} design columns (need at "
            f"least columns + 2)")
    col_names = lead_names + _feature_names(cov_names, model_idx, form, square_local)

    _, r, piv = sla.qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > RANK_TOL * max(diag[0], 1.0)))
    if rank < design.shape[1]:
        bad = sorted(col_names[j] for j in piv[rank:])
        raise CalibrationError(
            f"design is rank deficient (rank {rank} of {design.shape[1]}); "
            f"collinear columns: {', '.join(bad)}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    if t is not None:
        mu1, mu0 = float(coef[0]), float(coef[1])
        beta = coef[2:]
    else:
        mu0 = float(coef[0])
        mu1 = mu0 + 1.0
        beta = coef[1:]
    return OutcomeModel(kind="calibrated", beta=np.asarray(beta), mu0=mu0, mu1=mu1,
                        noise_sd=1.0, feature_columns=model_idx, feature_form=form,
                        square_columns=square_local)


def trimmed_length(rows: int, n0: int, batch_size: int) -> int:
    """Largest even n <= rows with (n - n0) a multiple of the batch size."""
    for n in range(rows, n0 - 1, -1):
        if n % 2 == 0 and (n - n0) % batch_size == 0:
            return n
    raise ConfigError(
        f"no feasible trial length <= {rows} for N0={n0}, N={batch_size}")


def make_calibrated_example(data, outcome_column: str, covariate_columns=None,
                            form: str = "linear", arm_column: str | None = None,
                            **config_overrides) -> ExampleDef:
    """Assemble the calibrated scenario: fitted model, table-backed covariate
    source, and a config whose length is trimmed to fit the batch structure."""
    names, matrix = data if isinstance(data, tuple) else load_table(data)
    model = calibrate_pseudo_trial((names, matrix), outcome_column,
                                   covariate_columns=covariate_columns, form=form,
                                   arm_column=arm_column)
    _, x, _, _ = _split_table(names, matrix, outcome_column, arm_column)
    base = TrialConfig(n=2, p=x.shape[1], **config_overrides)
    n = trimmed_length(x.shape[0], base.n0, base.batch_size)
    if n < matrix.shape[0]:
        log.info("calibrated trial length trimmed to %d of %d rows", n, matrix.shape[0])
    cfg = TrialConfig(n=n, p=x.shape[1], **config_overrides)
    return ExampleDef(example_id="calibrated", config=cfg, model=model,
                      covariates=CovariateSpec(kind="table", table=x),
                      true_set=model.feature_columns)


def make_standin_table(seed: int = 0, rows: int = 376) -> tuple[list[str], np.ndarray]:
    """Synthetic dataset shaped like a modest two-arm trial export.

    376 rows, 57 covariates (one binary indicator and one bounded integer
    scale carry the signal, the rest are noise of assorted types), an arm
    column split exactly in half, and an outcome with unit treatment effect.
    """
    rng = np.random.default_rng(seed)
    n = rows
    x = np.zeros((n, 57))
    x[:, 0] = rng.random(n) < 0.35
    x[:, 1] = np.clip(np.round(rng.normal(20.0, 6.0, n)), 0.0, 40.0)
    x[:, 2:32] = rng.standard_normal((n, 30))
    for j in range(32, 47):
        x[:, j] = rng.random(n) < 0.2 + 0.5 * ((j - 32) / 14.0)
    x[:, 47:57] = rng.normal(0.0, 3.0, (n, 10))
    arm = np.zeros(n)
    arm[rng.permutation(n)[: n // 2]] = 1.0
    y = 0.5 + 1.0 * arm + 2.0 * x[:, 0] - 0.15 * x[:, 1] + rng.standard_normal(n)
    names = ["outcome", "arm"] + [f"x{j + 1}" for j in range(57)]
    return names, np.column_stack([y, arm, x])
