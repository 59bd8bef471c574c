from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from netgee.gee import FitOptions, fit_gee
from netgee.inference import (
    ExperimentBudgetError,
    Method,
    MethodOutcome,
    RateCheckConfig,
    Replication,
    ExperimentResult,
    SimStudyConfig,
    bias_variance_experiment,
    empirical_null_test,
    exceedance_pvalue,
    rate_check,
    run_experiment,
    run_replication,
    simulate_replication,
    type1_error_experiment,
    wald_test,
)
from netgee.model import Link

SMALL = SimStudyConfig(K=6, m=5, p=0.8, q=0.0, beta0=0.0, B=12, detection=None, base_seed=5)


def test_config_invariants():
    assert SMALL.n == 30 and SMALL.l == 10
    with pytest.raises(ValueError):
        SimStudyConfig(B=0)
    with pytest.raises(ValueError):
        SimStudyConfig.from_n(201, 20)
    assert SimStudyConfig.from_n(400, 40).m == 10


class TestWald:
    def fit(self):
        g, planted, X, y = simulate_replication(SMALL, 0)
        return fit_gee(g, planted, X, y)

    def test_zero_estimate_gives_p_one(self):
        fit = self.fit()
        fake = replace(fit, params=replace(fit.params, beta=0.0))
        assert wald_test(fake) == (0.0, 1.0)

    def test_critical_value(self):
        fit = self.fit()
        se = fit.sandwich_se[0]
        fake = replace(fit, params=replace(fit.params, beta=1.96 * se))
        z, p = wald_test(fake)
        assert z == pytest.approx(1.96, abs=1e-12) and p == pytest.approx(0.05, abs=1e-3)

    def test_zero_se(self):
        fit = self.fit()
        with pytest.raises(ValueError):
            wald_test(replace(fit, sandwich_cov=np.zeros_like(fit.sandwich_cov)))

    def test_model_based_variant(self):
        fit = self.fit()
        z, _ = wald_test(fit, robust=False)
        assert z == pytest.approx(fit.params.beta / fit.naive_se[0])


class TestExceedance:
    def test_examples(self):
        null = np.random.default_rng(0).normal(size=500)
        assert exceedance_pvalue(null, 0.0) == 1.0
        assert exceedance_pvalue(null, np.abs(null).max() + 1) == 1 / 501
        med = np.median(np.abs(null))
        assert abs(exceedance_pvalue(null, med) - 0.5) <= 2 / np.sqrt(500)
        with pytest.raises(ValueError):
            exceedance_pvalue([], 1.0)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50), st.floats(-1e6, 1e6))
    def test_matches_counting(self, null, obs):
        hits = sum(abs(b) >= abs(obs) for b in null)
        assert exceedance_pvalue(null, obs) == (1 + hits) / (1 + len(null))

    @settings(max_examples=50)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0, 10), st.floats(0, 10))
    def test_monotone_in_observed_magnitude(self, null, a, b):
        lo, hi = sorted((a, b))
        assert exceedance_pvalue(null, hi) <= exceedance_pvalue(null, lo)


class TestReplications:
    def test_replication_is_reproducible_in_isolation(self):
        full = run_experiment(SMALL, threads=1)
        alone = run_replication(SMALL, 7)
        assert full.replications[7].outcomes == alone.outcomes

    def test_parallel_matches_serial(self):
        a = run_experiment(SMALL, threads=1)
        b = run_experiment(SMALL, threads=2)
        assert [r.outcomes for r in a.replications] == [r.outcomes for r in b.replications]

    def test_replications_differ(self):
        g0 = simulate_replication(SMALL, 0)[0].weights
        g1 = simulate_replication(SMALL, 1)[0].weights
        assert not np.array_equal(g0, g1)

    def test_thread_env(self, monkeypatch):
        from netgee.inference import resolve_threads

        monkeypatch.setenv("NETGEE_THREADS", "3")
        assert resolve_threads() == 3
        assert resolve_threads(1) == 1


def fake_result(config, errors):
    reps = []
    for b, err in enumerate(errors):
        out = MethodOutcome(0.1 * b, 1.0, err is None, err)
        reps.append(Replication(b, {m.value: out for m in config.methods}, 1, 1.0, 0.0))
    return ExperimentResult(config, tuple(reps))


class TestBudget:
    def test_over_budget_raises(self):
        config = replace(SMALL, B=20)
        fake_result(config, [None] * 19 + ["boom"]).check_budget()
        with pytest.raises(ExperimentBudgetError, match="2/20"):
            fake_result(config, [None] * 18 + ["boom"] * 2).check_budget()

    def test_failures_are_excluded_and_counted(self):
        config = replace(SMALL, B=4)
        res = fake_result(config, [None, "x", None, None])
        rows = type1_error_experiment(config, result=res)
        assert all(r["n_ok"] == 3 and r["n_failed"] == 1 for r in rows)


class TestExperiments:
    def test_type1_needs_null(self):
        with pytest.raises(ValueError):
            type1_error_experiment(replace(SMALL, beta0=0.5))

    def test_type1_rows(self):
        rows = type1_error_experiment(SMALL, threads=1)
        assert [r["method"] for r in rows] == ["gee-indep", "gee-exch", "naive"]
        for r in rows:
            assert 0.0 <= r["rate"] <= 1.0
            assert r["mc_se"] == pytest.approx(np.sqrt(r["rate"] * (1 - r["rate"]) / r["n_ok"]))

    def test_bias_variance_rows(self):
        config = replace(SMALL, beta0=0.5, methods=(Method.GEE_INDEP, Method.NAIVE))
        res = run_experiment(config, threads=1)
        rows = bias_variance_experiment(config, result=res)
        for r, m in zip(rows, config.methods):
            betas = res.betas(m)
            assert r["bias_sq"] == pytest.approx((betas.mean() - 0.5) ** 2)
            assert r["se"] == pytest.approx(betas.std(ddof=1))
        # full-network independence GEE and the naive fit coincide per replication
        assert np.allclose(res.betas(Method.GEE_INDEP), res.betas(Method.NAIVE), atol=1e-8)

    def test_empirical_null(self):
        config = replace(SMALL, B=100, methods=(Method.GEE_INDEP,))
        assert empirical_null_test(config, 0.0, threads=1) == 1.0
        with pytest.raises(ValueError):
            empirical_null_test(replace(config, B=99), 0.0)
        with pytest.raises(ValueError):
            empirical_null_test(replace(config, beta0=0.5), 0.0)


class TestRateCheck:
    def test_degenerate_probabilities(self):
        out = rate_check(RateCheckConfig(p=1.0, q=0.0, reps=5, ladder=((3, 2), (3, 3), (4, 3))))
        for row in out["rows"]:
            assert row["sd_scaled_p"] == 0.0 and row["sd_scaled_q"] == 0.0
            assert row["ks_p_within"] is None and row["ks_p_between"] is None

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RateCheckConfig(gamma=2.0)
        with pytest.raises(ValueError):
            RateCheckConfig(ladder=((10, 20), (10, 40)))

    def test_scaled_sd_matches_binomial_theory(self):
        # sd(m sqrt(K) (p_hat - p)) = sqrt(p (1 - p) m / (m - 1)) exactly in distribution
        out = rate_check(RateCheckConfig(reps=400, ladder=((5, 4), (5, 8), (10, 8))))
        for row in out["rows"]:
            m = row["m"]
            theory = np.sqrt(0.24 * m / (m - 1))
            assert row["sd_scaled_p"] == pytest.approx(theory, rel=0.15)

    def test_follow_regime_keeps_products(self):
        cfg = RateCheckConfig(gamma=1.0, follow_regime=True)
        for step, (m, K) in enumerate(cfg.ladder):
            p, q = cfg.probs_at(step)
            assert K * m * p == pytest.approx(20 * 10 * 0.6)
            assert K * K * m * q == pytest.approx(400 * 10 * 0.2)


def test_gaussian_null_rejection_rate_with_oracle_partition():
    """Wald rejection rates under the null are near the nominal level for the naive fit."""
    config = SimStudyConfig(K=20, m=10, beta0=0.0, B=200, detection=None, methods=(Method.NAIVE,))
    rate = run_experiment(config, threads=1).rejection_rate(Method.NAIVE)
    assert abs(rate - 0.05) < 3 * np.sqrt(0.05 * 0.95 / 200) + 0.01
