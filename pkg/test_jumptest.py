import math

import numpy as np
import pytest

import jumptest
from config import TestConfig, TruncationRule
from conftest import SECOND, SIGMA
from errors import ConfigError, DegeneratePathError, DomainError
from jumptest import (
    TestResult,
    consistent_decision,
    jump_cutoff,
    jump_variation_share,
    no_jump_cutoff,
    noise_limit,
    normal_quantile,
    resolve_truncation,
    resolve_window,
    run_tests,
    variance_jump_null,
    variance_nojump_null,
)
from variation import IncrementSeries, local_jump_variance, power_variation


class TestNormalQuantile:
    @pytest.mark.parametrize("alpha, expected", [(0.05, 1.64), (0.10, 1.28)])
    def test_table_values(self, alpha, expected):
        assert abs(normal_quantile(alpha) - expected) < 0.01

    def test_median(self):
        assert normal_quantile(0.5) == 0.0

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
    def test_out_of_range(self, alpha):
        with pytest.raises(DomainError):
            normal_quantile(alpha)


class TestCutoffs:
    def test_no_jump_cutoff(self):
        assert no_jump_cutoff(0.01, 4, 2, 0.05) == pytest.approx(2 - normal_quantile(0.05) * 0.1)
        assert no_jump_cutoff(0.01, 4, 2, 0.05) == pytest.approx(1.836, abs=0.001)

    def test_gaussian_jump_cutoff(self):
        assert jump_cutoff(0.01, 0.05, "gaussian") == pytest.approx(1.164, abs=0.001)

    def test_chebyshev_jump_cutoff(self):
        assert jump_cutoff(0.01, 0.04, "chebyshev") == pytest.approx(1.5)

    def test_unknown_style(self):
        with pytest.raises(ConfigError):
            jump_cutoff(0.01, 0.05, "student")

    @pytest.mark.parametrize("level", np.linspace(0.005, 0.317, 25))
    def test_chebyshev_rejection_region_inside_gaussian(self, level):
        variance = 0.004
        chebyshev = jump_cutoff(variance, level, "chebyshev")
        gaussian = jump_cutoff(variance, level, "gaussian")
        assert chebyshev >= gaussian
        statistics = np.linspace(0.5, 3.0, 501)
        assert not np.any((statistics > chebyshev) & (statistics <= gaussian))


class TestVarianceEstimators:
    def test_jump_null_variance_zero_when_everything_truncated(self, jump_series):
        rule = TruncationRule(alpha=1e-12, varpi=0.47)
        assert variance_jump_null(jump_series, TestConfig(), rule) == 0.0

    def test_jump_null_needs_p_above_three(self, jump_series):
        with pytest.raises(DomainError):
            variance_jump_null(jump_series, TestConfig(p=3))

    def test_jump_null_variance_for_p4_k2(self, jump_series):
        # delta (k-1) p^2 / 2 = 8 delta
        rule = TruncationRule(alpha=2.0, varpi=0.47)
        d6 = local_jump_variance(jump_series, 6, 619, rule)
        expected = 8 * SECOND * d6 / power_variation(jump_series, 4) ** 2
        assert variance_jump_null(jump_series, TestConfig(p=4, k=2), rule) == pytest.approx(expected, rel=1e-12)

    def test_nojump_variance_degenerate_when_everything_truncated(self, brownian_series):
        rule = TruncationRule(alpha=1e-12, varpi=0.47)
        with pytest.raises(DegeneratePathError):
            variance_nojump_null(brownian_series, TestConfig(), rule)

    def test_constant_path_is_degenerate(self):
        series = IncrementSeries(np.zeros(100), SECOND)
        with pytest.raises(DegeneratePathError):
            variance_jump_null(series, TestConfig(), TruncationRule(alpha=1.0, varpi=0.47))
        with pytest.raises(DegeneratePathError):
            resolve_truncation(series, TestConfig())

    def test_nojump_variance_on_brownian_path(self, brownian_series):
        # Delta M(4,2) A(8) / A(4)^2 = M / n for constant volatility
        expected = (160 / 3) / len(brownian_series)
        assert variance_nojump_null(brownian_series, TestConfig()) == pytest.approx(expected, rel=0.4)

    @pytest.mark.parametrize("estimator", ["truncated", "multipower"])
    @pytest.mark.parametrize("c", [2.0, 0.5])
    def test_scale_invariance(self, jump_series, estimator, c):
        cfg = TestConfig(variance_estimator=estimator)
        for fn in (variance_nojump_null, variance_jump_null):
            base = fn(jump_series, cfg)
            assert fn(jump_series.scaled(c), cfg) == pytest.approx(base, rel=1e-10)


class TestTruncationAndWindow:
    def test_explicit_rule_wins(self, brownian_series):
        rule = TruncationRule(alpha=2.0, varpi=0.47)
        assert resolve_truncation(brownian_series, TestConfig(truncation=rule, sigma_guess=1.0)) == rule

    def test_sigma_guess(self, brownian_series):
        rule = resolve_truncation(brownian_series, TestConfig(sigma_guess=0.4))
        assert rule.alpha == pytest.approx(2.0)
        assert rule.varpi == 0.47

    def test_bootstrap_recovers_diffusive_sigma_despite_jump(self, jump_series):
        rule = resolve_truncation(jump_series, TestConfig())
        assert rule.alpha == pytest.approx(5 * 0.4, rel=0.05)

    def test_bootstrap_ignores_infinite_activity_jumps(self, rng):
        n = 23400
        x = SIGMA * np.sqrt(SECOND) * rng.standard_normal(n) + 50.0 * SECOND / 2 * rng.standard_cauchy(n)
        rule = resolve_truncation(IncrementSeries(x, SECOND), TestConfig())
        assert rule.alpha == pytest.approx(5 * SIGMA, rel=0.2)

    def test_bootstrap_falls_back_to_realized_variance(self):
        x = np.zeros(1000)
        x[::2] = 1e-4
        rule = resolve_truncation(IncrementSeries(x, SECOND), TestConfig())
        assert rule.alpha > 0

    def test_auto_window_reads_delta_in_days(self, brownian_series):
        assert resolve_window(brownian_series, TestConfig()) == 619
        assert resolve_window(brownian_series, TestConfig(window_kn=30)) == 30


class TestConfigChecks:
    def test_p_must_exceed_three(self, brownian_series):
        with pytest.raises(ConfigError):
            jumptest.test_no_jump_null(brownian_series, TestConfig(p=3))
        with pytest.raises(ConfigError):
            jumptest.test_jump_null(brownian_series, TestConfig(p=2.5))

    def test_varpi_range_for_truncated_estimator(self, brownian_series):
        cfg = TestConfig(truncation=TruncationRule(alpha=2.0, varpi=0.2))
        with pytest.raises(ConfigError):
            jumptest.test_no_jump_null(brownian_series, cfg)
        # the multipower estimator does not truncate
        jumptest.test_no_jump_null(brownian_series, cfg.model_copy(update={"variance_estimator": "multipower"}))

    def test_invalid_window(self):
        with pytest.raises(ValueError):
            TestConfig(window_kn=0)


class TestNoJumpNull:
    def test_continuous_path_near_two(self, brownian_series):
        result = jumptest.test_no_jump_null(brownian_series, TestConfig())
        assert abs(result.statistic - 2.0) < 0.25
        assert result.null_hypothesis == "no_jumps"
        assert result.n_increments == 23400
        assert result.standardized == pytest.approx((result.statistic - 2.0) / math.sqrt(result.variance))
        assert result.cutoff == pytest.approx(no_jump_cutoff(result.variance, 4, 2, 0.05))

    def test_rejects_on_jump_path(self, jump_series):
        result = jumptest.test_no_jump_null(jump_series, TestConfig())
        assert result.reject
        assert result.jump_share > 0.5

    def test_decision_matches_cutoff(self, brownian_series):
        result = jumptest.test_no_jump_null(brownian_series, TestConfig())
        assert result.reject == (result.statistic < result.cutoff)

    @pytest.mark.parametrize("c", [2.0, 0.5])
    def test_scale_invariant(self, jump_series, c):
        base = jumptest.test_no_jump_null(jump_series, TestConfig())
        scaled = jumptest.test_no_jump_null(jump_series.scaled(c), TestConfig())
        assert scaled.statistic == pytest.approx(base.statistic, rel=1e-10)
        assert scaled.variance == pytest.approx(base.variance, rel=1e-10)
        assert scaled.reject == base.reject


class TestJumpNull:
    def test_rejects_on_continuous_path(self, brownian_series):
        result = jumptest.test_jump_null(brownian_series, TestConfig())
        assert result.reject
        assert result.window_kn == 619
        assert result.cutoff_style == "gaussian"

    def test_statistic_near_one_on_jump_path(self, jump_series):
        result = jumptest.test_jump_null(jump_series, TestConfig(), cutoff_style="chebyshev")
        assert abs(result.statistic - 1.0) < 0.1
        assert result.cutoff == pytest.approx(1 + math.sqrt(result.variance / 0.05))
        assert result.reject == (result.statistic > result.cutoff)

    def test_zero_variance_leaves_standardized_empty(self, jump_series):
        cfg = TestConfig(truncation=TruncationRule(alpha=1e-12, varpi=0.47))
        result = jumptest.test_jump_null(jump_series, cfg)
        assert result.variance == 0.0
        assert result.standardized is None
        assert result.cutoff == 1.0


def test_run_tests_order_and_json(brownian_series):
    results = run_tests(brownian_series, TestConfig(), ["jumps", "no_jumps"])
    assert [r.null_hypothesis for r in results] == ["jumps", "no_jumps"]
    payload = results[0].to_json_dict()
    assert payload["null"] == "jumps"
    assert payload["n"] == 23400
    assert payload["schema_version"] == "1"
    assert TestResult.model_validate(payload) == results[0]


def test_run_tests_unknown_null(brownian_series):
    with pytest.raises(ConfigError):
        run_tests(brownian_series, TestConfig(), ["maybe"])


class TestConsistentDecision:
    def test_default_threshold_is_midpoint(self):
        assert consistent_decision(1.02) == "jumps"
        assert consistent_decision(1.97) == "continuous"
        assert consistent_decision(1.49) == "jumps"

    def test_custom_threshold(self):
        assert consistent_decision(1.3, threshold=1.2) == "continuous"

    @pytest.mark.parametrize("threshold", [1.0, 2.0, 0.5])
    def test_threshold_outside_interval(self, threshold):
        with pytest.raises(DomainError):
            consistent_decision(1.5, threshold=threshold)


def test_jump_variation_share(brownian_series, jump_series):
    rule = TruncationRule(alpha=2.0, varpi=0.47)
    assert jump_variation_share(brownian_series, rule) < 0.01
    # jump^2 = 0.0025 against 0.16 / 252 of diffusive variance
    assert jump_variation_share(jump_series, rule) == pytest.approx(0.0025 / (0.0025 + 0.16 / 252), abs=0.05)


def test_noise_limit():
    assert noise_limit(2) == 0.5
    assert noise_limit(3) == pytest.approx(1 / 3)
    with pytest.raises(DomainError):
        noise_limit(1)
