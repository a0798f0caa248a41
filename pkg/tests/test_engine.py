"""Assignment engines: config contracts, the biased coin, and the run functions."""

import numpy as np
import pytest

from arcslab.balance import mahalanobis_imb, rebuild_state
from arcslab.engine import (
    TrialConfig,
    _pair_imbalances,
    assignment_phi,
    biased_coin,
    canonical_method,
    rr_threshold,
    run_arcs,
    run_arcs_m,
    run_arm,
    run_cov,
    run_cr,
    run_rr,
    run_trial,
    validate,
)
from arcslab.errors import ConfigError, DrawBudgetError
from oracles import chi2_quantile_bisect


def zero_oracle(row, arm):
    return 0.0


def noisy_oracle(rng):
    def oracle(row, arm):
        return float(arm + row[0] + rng.standard_normal())
    return oracle


class StubRng:
    """Deterministic uniform source: .random() always returns the same value.

    0.49 makes every biased-coin decision pick its high-probability branch
    and resolves exact ties in favor of arm 1.
    """

    def __init__(self, value=0.49):
        self.value = value
        self.calls = 0

    def random(self):
        self.calls += 1
        return self.value


class TestConfigValidation:
    def test_method_normalization(self):
        assert canonical_method(" arcs_cov ") == "ARCS-COV"
        assert validate(TrialConfig(n=40, p=3, method="arm")).method == "ARM"
        with pytest.raises(ConfigError, match="unknown method"):
            canonical_method("bandit")

    def test_batch_divisibility(self):
        validate(TrialConfig(n=50, p=4, n0=30, batch_size=10, method="ARCS-COV"))
        with pytest.raises(ConfigError, match="multiple of the batch size"):
            validate(TrialConfig(n=55, p=4, n0=30, batch_size=10, method="ARCS-COV"))

    def test_burn_in_and_rho(self):
        with pytest.raises(ConfigError, match="even"):
            validate(TrialConfig(n=40, p=3, n0=7, method="ARCS-COV"))
        with pytest.raises(ConfigError, match="smaller than the burn-in"):
            validate(TrialConfig(n=20, p=3, n0=30, method="COV"))
        with pytest.raises(ConfigError, match="rho"):
            validate(TrialConfig(n=40, p=3, rho=0.5, method="CR"))
        with pytest.raises(ConfigError, match="rho"):
            validate(TrialConfig(n=40, p=3, rho=1.0, method="CR"))

    def test_pairwise_needs_even_counts(self):
        with pytest.raises(ConfigError, match="even n"):
            validate(TrialConfig(n=41, p=3, n0=30, batch_size=11, method="ARCS-M"))
        with pytest.raises(ConfigError, match="even size"):
            validate(TrialConfig(n=40, p=3, n0=30, batch_size=5, method="ARCS-M"))

    def test_rr_preconditions(self):
        with pytest.raises(ConfigError, match="requires p < n"):
            validate(TrialConfig(n=10, p=10, method="RR"))
        with pytest.raises(ConfigError, match="rr_accept_prob"):
            validate(TrialConfig(n=10, p=2, method="RR", rr_accept_prob=0.0))

    def test_cov_rejects_foreign_phi(self):
        from arcslab.balance import PhiSpec
        bad = PhiSpec(kind="mahalanobis", weights=(0.5, 0.5))
        with pytest.raises(ConfigError, match="cov-family"):
            validate(TrialConfig(n=40, p=3, method="ARCS-COV", phi=bad))
        assert assignment_phi(TrialConfig(n=40, p=3)).kind == "cov"

    def test_covariate_matrix_contracts(self):
        cfg = TrialConfig(n=6, p=2, method="CR")
        with pytest.raises(ConfigError, match="does not match"):
            run_cr(cfg, np.zeros((5, 2)), zero_oracle, rng=np.random.default_rng(0))
        bad = np.zeros((6, 2))
        bad[3, 1] = np.inf
        with pytest.raises(ConfigError, match="non-finite"):
            run_cr(cfg, bad, zero_oracle, rng=np.random.default_rng(0))


class TestBiasedCoin:
    def test_favored_branch_frequency(self):
        rng = np.random.default_rng(11)
        hits = sum(biased_coin(-1.0, 0.85, rng) for _ in range(10_000))
        assert abs(hits / 10_000 - 0.85) <= 0.03

    def test_disfavored_and_tie_frequencies(self):
        rng = np.random.default_rng(12)
        up = sum(biased_coin(2.0, 0.85, rng) for _ in range(10_000)) / 10_000
        tie = sum(biased_coin(0.0, 0.85, rng) for _ in range(10_000)) / 10_000
        assert abs(up - 0.15) <= 0.03
        assert abs(tie - 0.5) <= 0.03

    def test_relative_tie_threshold(self):
        rng = np.random.default_rng(13)
        near = sum(biased_coin(1e-14, 0.85, rng, scale=1.0) for _ in range(4000)) / 4000
        clear = sum(biased_coin(2e-12, 0.85, rng, scale=1.0) for _ in range(4000)) / 4000
        assert abs(near - 0.5) <= 0.04
        assert abs(clear - 0.15) <= 0.04

    def test_rho_contract(self):
        with pytest.raises(ConfigError, match="rho"):
            biased_coin(-1.0, 0.4, np.random.default_rng(0))


class TestHandTrace:
    def test_arcs_cov_eight_patient_trace(self):
        # every decision forced to its modal branch; flat outcomes keep the
        # working set empty, so the coin alternates arms on the count block
        cfg = TrialConfig(n=8, p=2, n0=4, batch_size=2, method="ARCS-COV")
        x = np.arange(16, dtype=np.float64).reshape(8, 2)
        stub = StubRng(0.49)
        state = run_arcs(cfg, x, zero_oracle, rng=stub,
                         select_rng=np.random.default_rng(0))
        np.testing.assert_array_equal(state.assignments, [1, 0, 1, 0, 1, 0, 1, 0])
        assert stub.calls == 2 + 4
        assert state.selection_history == [(), (), ()]
        assert state.stale_history == [True, False, False]
        assert state.batch_index == 2
        assert np.all(state.outcomes == 0.0)


class TestRunArcs:
    def test_burn_in_pairs_and_conservation(self):
        rng = np.random.default_rng(21)
        cfg = TrialConfig(n=40, p=5, n0=10, batch_size=6, method="ARCS-COV")
        x = rng.standard_normal((40, 5))
        state = run_arcs(cfg, x, noisy_oracle(np.random.default_rng(1)),
                         rng=np.random.default_rng(2), select_rng=np.random.default_rng(3))
        t = state.assignments
        assert np.all((t == 0) | (t == 1))
        for i in range(0, 10, 2):
            assert t[i] + t[i + 1] == 1
        assert sum(state.arm_sizes) == 40
        assert np.all(np.isfinite(state.outcomes))

    def test_selection_history_has_batches_plus_one_entries(self):
        cfg = TrialConfig(n=40, p=5, n0=10, batch_size=6, method="ARCS-COV")
        x = np.random.default_rng(22).standard_normal((40, 5))
        state = run_arcs(cfg, x, noisy_oracle(np.random.default_rng(4)),
                         rng=np.random.default_rng(5), select_rng=np.random.default_rng(6))
        assert cfg.batches == 5
        assert len(state.selection_history) == 6
        assert len(state.stale_history) == 6
        assert state.selected == state.selection_history[-1]

    def test_imbalance_state_matches_rebuild(self):
        cfg = TrialConfig(n=36, p=4, n0=12, batch_size=8, method="ARCS-COV")
        x = np.random.default_rng(23).standard_normal((36, 4))
        state = run_arcs(cfg, x, noisy_oracle(np.random.default_rng(7)),
                         rng=np.random.default_rng(8), select_rng=np.random.default_rng(9))
        # the incremental Lambda kept during the run must agree with a from-
        # scratch rebuild over the final history and working set
        rebuilt = rebuild_state(x, state.assignments, state.imbalance.selected,
                                assignment_phi(cfg))
        np.testing.assert_allclose(state.imbalance.lambda_vec, rebuilt.lambda_vec,
                                   atol=1e-9)

    def test_determinism_across_runs(self):
        cfg = TrialConfig(n=30, p=4, n0=10, batch_size=10, method="ARCS-COV", seed=77)
        x = np.random.default_rng(24).standard_normal((30, 4))

        def fixed_oracle(row, arm):
            return float(arm + row[1])

        a = run_trial(cfg, x, fixed_oracle)
        b = run_trial(cfg, x, fixed_oracle)
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.selection_history == b.selection_history


class TestRunArcsM:
    def test_pairing_invariant(self):
        cfg = TrialConfig(n=32, p=4, n0=8, batch_size=4, method="ARCS-M")
        x = np.random.default_rng(31).standard_normal((32, 4))
        state = run_arcs_m(cfg, x, noisy_oracle(np.random.default_rng(10)),
                           rng=np.random.default_rng(11),
                           select_rng=np.random.default_rng(12))
        t = state.assignments
        for i in range(0, 32, 2):
            assert t[i] + t[i + 1] == 1
        assert state.arm_sizes == (16, 16)

    def test_pair_imbalances_match_direct_scores(self):
        rng = np.random.default_rng(32)
        x = rng.standard_normal((12, 3))
        t = np.array([1, 0, 0, 1, 1, 0, 1, 0, 0, 1, -1, -1], dtype=np.int8)
        i = 10
        imb1, imb0 = _pair_imbalances(x[:12], t[:12], i, 1e-10)
        t_a = t.copy()
        t_a[10], t_a[11] = 1, 0
        t_b = t.copy()
        t_b[10], t_b[11] = 0, 1
        assert imb1 == pytest.approx(mahalanobis_imb(x, t_a), rel=1e-10)
        assert imb0 == pytest.approx(mahalanobis_imb(x, t_b), rel=1e-10)

    def test_empty_working_set_pairs_are_ties(self):
        imb1, imb0 = _pair_imbalances(np.empty((6, 0)), np.array([1, 0, 1, 0, -1, -1]),
                                      4, 1e-10)
        assert imb1 == imb0 == 0.0


class TestCompetitors:
    def test_cr_fair_coin(self):
        cfg = TrialConfig(n=2000, p=2, method="CR")
        x = np.random.default_rng(41).standard_normal((2000, 2))
        state = run_cr(cfg, x, zero_oracle, rng=np.random.default_rng(42))
        share = state.assignments.mean()
        assert abs(share - 0.5) <= 0.03

    def test_arm_is_fixed_full_set_arcs_m(self):
        cfg = TrialConfig(n=24, p=3, n0=8, batch_size=8, method="ARM")
        x = np.random.default_rng(43).standard_normal((24, 3))
        a = run_arm(cfg, x, zero_oracle, rng=np.random.default_rng(7))
        b = run_arcs_m(cfg, x, zero_oracle, rng=np.random.default_rng(7),
                       _fixed_selection=tuple(range(3)))
        np.testing.assert_array_equal(a.assignments, b.assignments)
        assert a.selection_history == [] and a.selected == (0, 1, 2)

    def test_cov_is_fixed_full_set_arcs(self):
        cfg = TrialConfig(n=24, p=3, n0=8, method="COV")
        x = np.random.default_rng(44).standard_normal((24, 3))
        a = run_cov(cfg, x, zero_oracle, rng=np.random.default_rng(8))
        b = run_arcs(cfg, x, zero_oracle, rng=np.random.default_rng(8),
                     _fixed_selection=(0, 1, 2))
        np.testing.assert_array_equal(a.assignments, b.assignments)

    def test_cov_handles_more_covariates_than_patients(self):
        cfg = TrialConfig(n=34, p=40, n0=10, method="COV")
        x = np.random.default_rng(45).standard_normal((34, 40))
        state = run_cov(cfg, x, zero_oracle, rng=np.random.default_rng(9))
        assert sum(state.arm_sizes) == 34


class TestRerandomization:
    def test_threshold_matches_quantile_oracle(self):
        a = rr_threshold(10, 0.001)
        assert a == pytest.approx(1.479, abs=5e-3)
        assert a == pytest.approx(chi2_quantile_bisect(10, 0.001), abs=1e-9)

    def test_accepted_split_clears_threshold(self):
        cfg = TrialConfig(n=60, p=4, method="RR")
        x = np.random.default_rng(51).standard_normal((60, 4))
        state = run_rr(cfg, x, zero_oracle, rng=np.random.default_rng(52))
        t = state.assignments
        assert state.arm_sizes == (30, 30)
        assert state.rr_draws >= 1
        d = x[t == 1].mean(axis=0) - x[t == 0].mean(axis=0)
        from arcslab.numerics import pinv, sample_cov
        stat = 0.25 * 60 * float(d @ pinv(sample_cov(x, ddof=1), cfg.pinv_tol_ratio) @ d)
        assert stat < rr_threshold(4, cfg.rr_accept_prob)

    def test_draw_budget_exhaustion(self):
        cfg = TrialConfig(n=40, p=6, method="RR", rr_accept_prob=1e-12, rr_max_draws=3)
        x = np.random.default_rng(53).standard_normal((40, 6))
        with pytest.raises(DrawBudgetError, match="all 3 redraws"):
            run_rr(cfg, x, zero_oracle, rng=np.random.default_rng(54))


class TestBalanceDominance:
    def test_arcs_cov_beats_cr_on_shared_patients(self):
        # run-mean feature imbalance under the steered coin must undercut
        # complete randomization on the same covariate draws
        rng = np.random.default_rng(61)
        cr_scores, arcs_scores = [], []
        cfg = TrialConfig(n=60, p=6, n0=10, batch_size=10, method="ARCS-COV")
        for rep in range(60):
            x = rng.standard_normal((60, 6))
            noise = np.random.default_rng(1000 + rep)

            def oracle(row, arm):
                return float(arm + 3.0 * row[0] + noise.standard_normal())

            cr = run_cr(cfg, x, oracle, rng=np.random.default_rng(2000 + rep))
            ad = run_arcs(cfg, x, oracle, rng=np.random.default_rng(3000 + rep),
                          select_rng=np.random.default_rng(4000 + rep))
            spec = assignment_phi(cfg)
            cr_scores.append(rebuild_state(x, cr.assignments, (0,), spec).imb_phi)
            arcs_scores.append(rebuild_state(x, ad.assignments, (0,), spec).imb_phi)
        assert np.mean(arcs_scores) < np.mean(cr_scores)
