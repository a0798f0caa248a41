"""Command line driver: config merging, commands, and the error contract."""

import csv
import json
import re

import numpy as np
import pytest

from arcslab.calibrate import make_standin_table, write_table_csv
from arcslab.cli import ExperimentSpec, main, parse_config, spec_to_json
from arcslab.errors import ConfigError

ERROR_RE = re.compile(r'^ARCS-ERROR code=(\w[\w-]*) message="(.*)"$')


def error_code(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    match = ERROR_RE.match(err[-1])
    assert match, f"no machine-parsable error line in {err!r}"
    return match.group(1)


class TestParseConfig:
    def test_defaults(self):
        spec = parse_config(None, {"example": "1a", "methods": ("cr",)})
        assert (spec.n0, spec.rho, spec.cv_folds, spec.seed) == (30, 0.85, 5, 42)
        assert spec.reps == 200 and spec.threads == 1

    def test_flags_win_over_file(self, tmp_path):
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"seed": 1, "n": 60, "methods": ["cr", "arm"]}))
        spec = parse_config(str(cfg), {"n": 80})
        assert spec.seed == 1
        assert spec.n == 80
        assert spec.methods == ("cr", "arm")

    def test_unknown_key_and_method(self, tmp_path):
        with pytest.raises(ConfigError, match="config key 'fold_count': unknown"):
            parse_config(None, {"fold_count": 3})
        with pytest.raises(ConfigError, match="unknown method"):
            parse_config(None, {"methods": ("bandit",)})
        with pytest.raises(ConfigError, match="at least one method"):
            parse_config(None, {"methods": ()})
        with pytest.raises(ConfigError, match="'reps'"):
            parse_config(None, {"reps": 0})
        with pytest.raises(ConfigError, match="'threads'"):
            parse_config(None, {"threads": 0})
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            parse_config(str(bad), {})
        with pytest.raises(ConfigError, match="cannot read config"):
            parse_config(str(tmp_path / "absent.json"), {})

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(17)
        examples = ("1a", "1b", "2", "3")
        method_pool = ("cr", "rr", "arm", "cov", "arcs-m", "arcs-cov")
        for _ in range(20):
            raw = {
                "example": examples[rng.integers(len(examples))],
                "methods": tuple(np.random.default_rng(int(rng.integers(1e6)))
                                 .choice(method_pool, size=int(rng.integers(1, 4)),
                                         replace=False).tolist()),
                "reps": int(rng.integers(1, 50)),
                "seed": int(rng.integers(0, 2**31)),
                "rho": float(rng.uniform(0.55, 0.95)),
                "out": f"out{int(rng.integers(10))}",
            }
            if rng.random() < 0.5:
                raw["n"] = int(rng.integers(2, 50)) * 10
            if rng.random() < 0.3:
                raw["weights"] = (0.2, 0.3, 0.5)
            spec = parse_config(None, raw)
            again = parse_config(None, spec_to_json(spec))
            assert again == spec

    def test_json_form_is_flat_and_complete(self):
        doc = spec_to_json(ExperimentSpec())
        assert doc["methods"] == ["cr"]
        assert doc["n"] is None
        assert set(doc) == {f for f in doc}


class TestTableCommand:
    def test_smoke_and_reruns_are_byte_identical(self, tmp_path, capsys):
        base = ["table", "--example", "1a", "--methods", "cr,rr,arm",
                "--n", "60", "--p", "5", "--reps", "3", "--seed", "7"]
        assert main(base + ["--out", str(tmp_path / "a")]) == 0
        out = capsys.readouterr().out
        assert "method" in out and "cr" in out and "arm" in out
        assert main(base + ["--out", str(tmp_path / "b")]) == 0
        for name in ("summary.csv", "per_rep.csv", "trajectory.csv"):
            first = (tmp_path / "a" / name).read_bytes()
            assert first == (tmp_path / "b" / name).read_bytes()
            assert first.startswith(b"rep,") or first.startswith(b"method,")

    def test_summary_rows_per_method(self, tmp_path, capsys):
        assert main(["table", "--example", "1a", "--methods", "cr,arcs-cov",
                     "--n", "40", "--p", "5", "--N0", "10", "--N", "10",
                     "--reps", "2", "--seed", "3", "--out", str(tmp_path)]) == 0
        with open(tmp_path / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["CR", "ARCS-COV"]
        assert float(rows[1]["tpr_final"]) >= 0.0

    def test_divisibility_error_names_the_knobs(self, capsys):
        code = None
        rc = main(["table", "--example", "1a", "--methods", "arcs-cov",
                   "--n", "121", "--reps", "2"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "ARCS-ERROR code=config" in err
        assert "n=121" in err and "N0=30" in err and "N=10" in err

    def test_rr_refused_when_p_not_below_n(self, capsys):
        rc = main(["table", "--example", "1b", "--methods", "rr",
                   "--n", "120", "--p", "150", "--reps", "2"])
        assert rc == 2
        assert error_code(capsys) == "config"

    def test_weights_flag_reaches_the_coin(self, tmp_path, capsys):
        rc = main(["table", "--example", "1a", "--methods", "arcs-cov",
                   "--n", "40", "--p", "5", "--N0", "10", "--N", "10",
                   "--weights", "0.2,0.3,0.5", "--reps", "2", "--seed", "4",
                   "--out", str(tmp_path)])
        assert rc == 0
        rc = main(["table", "--example", "1a", "--methods", "arcs-cov",
                   "--weights", "0.2,0.8,0.0,0.0", "--reps", "2"])
        assert rc == 2
        assert error_code(capsys) == "config"


class TestRunCommand:
    def test_prints_metrics(self, capsys):
        rc = main(["run", "--example", "1a", "--methods", "cr,rr",
                   "--n", "40", "--p", "5", "--seed", "3"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "method=cr" in out and "method=rr" in out
        assert "imb_m=" in out and "tau_hat=" in out and "rr_draws=" in out


class TestCalibrateCommand:
    @pytest.fixture()
    def data_csv(self, tmp_path):
        rng = np.random.default_rng(0)
        n = 40
        a = rng.standard_normal(n)
        b = rng.standard_normal(n)
        arm = np.zeros(n)
        arm[rng.permutation(n)[: n // 2]] = 1.0
        y = 0.5 + arm + 2.0 * a + rng.standard_normal(n)
        path = tmp_path / "trial.csv"
        write_table_csv(path, ["outcome", "arm", "a", "b"],
                        np.column_stack([y, arm, a, b]))
        return path

    def test_small_replay(self, data_csv, tmp_path, capsys):
        rc = main(["calibrate", "--data", str(data_csv),
                   "--arm-column", "arm", "--covariates", "a",
                   "--methods", "cr,arm,arcs-m", "--N0", "10", "--N", "10",
                   "--reps", "2", "--seed", "5", "--out", str(tmp_path / "out")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "calibrated linear model on columns [0]" in out
        with open(tmp_path / "out" / "summary.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["CR", "ARM", "ARCS-M"]
        assert all(float(r["imb_m"]) >= 0.0 for r in rows)

    def test_standin_smoke(self, tmp_path, capsys):
        names, matrix = make_standin_table(seed=0)
        path = tmp_path / "standin.csv"
        write_table_csv(path, names, matrix)
        rc = main(["calibrate", "--data", str(path), "--arm-column", "arm",
                   "--covariates", "x1,x2", "--methods", "cr",
                   "--reps", "2", "--seed", "6", "--out", str(tmp_path / "out")])
        assert rc == 0
        assert "n=370" in capsys.readouterr().out

    def test_missing_column_and_missing_data(self, data_csv, capsys):
        rc = main(["calibrate", "--data", str(data_csv),
                   "--outcome-column", "nope", "--covariates", "a", "--reps", "2"])
        assert rc == 2
        err = capsys.readouterr().err
        assert "ARCS-ERROR code=calibration" in err and "'nope'" in err
        rc = main(["calibrate", "--example", "calibrated", "--methods", "cr",
                   "--reps", "2"])
        assert rc == 2
        assert error_code(capsys) == "config"


class TestSelftest:
    def test_all_checks_pass(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert out.count(": ok") == 5
        assert "FAIL" not in out


class TestLogging:
    def test_bad_log_level_warns_but_runs(self, capsys, monkeypatch):
        monkeypatch.setenv("ARCS_LOG", "loud")
        rc = main(["run", "--example", "1a", "--methods", "cr",
                   "--n", "40", "--p", "5", "--seed", "3"])
        assert rc == 0
        err = capsys.readouterr().err
        assert "ARCS_LOG must be" in err
