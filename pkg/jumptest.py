"""
The two-scale power-variation test for jumps.

Two one-sided tests share the switch statistic S-hat(p, k, delta):
  - null "no_jumps": reject when S-hat falls below k^{p/2-1} - z * sqrt(V-hat^c)
  - null "jumps":    reject when S-hat rises above 1 + c(level) * sqrt(V-hat^j)
"""

import logging
import math
from typing import Iterable, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field
from scipy.special import ndtri

from config import SCHEMA_VERSION, TestConfig, TruncationRule
from errors import ConfigError, DegeneratePathError, DomainError
from moments import variance_scale_M
from variation import (
    IncrementSeries,
    default_window,
    local_jump_variance,
    multipower_variation,
    power_variation,
    switch_statistic,
    truncated_variation,
)

logger = logging.getLogger(__name__)

NullHypothesis = Literal["no_jumps", "jumps"]
CutoffStyle = Literal["chebyshev", "gaussian"]


class TestResult(BaseModel):
    """Outcome of one test on one series; dumps to a flat JSON object."""
    model_config = ConfigDict(frozen=True, populate_by_name=True)
    __test__ = False

    schema_version: str = SCHEMA_VERSION
    statistic: float
    variance: float = Field(..., ge=0)
    cutoff: float
    reject: bool
    null_hypothesis: NullHypothesis = Field(..., alias="null")
    n_increments: int = Field(..., alias="n")
    # None when the variance estimate is exactly zero
    standardized: Optional[float] = None
    p: float
    k: int
    level: float
    delta: float
    cutoff_style: Optional[CutoffStyle] = None
    variance_estimator: Optional[str] = None
    truncation_alpha: float
    truncation_varpi: float
    window_kn: Optional[int] = None
    jump_share: float

    def to_json_dict(self) -> dict:
        return self.model_dump(by_alias=True)


def normal_quantile(alpha: float) -> float:
    """
    Upper alpha-quantile z_alpha of N(0, 1), i.e. P(U > z_alpha) = alpha.

    Args:
        alpha: tail probability in (0, 1)

    Returns:
        z_alpha (1.645 for 0.05, 1.2816 for 0.10, 0 for 0.5)
    """
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return float(-ndtri(alpha)) + 0.0


def resolve_truncation(series: IncrementSeries, cfg: TestConfig) -> TruncationRule:
    """
    The truncation rule to use on this series.

    Explicit rules win; otherwise alpha = truncation_multiple * sigma, where
    sigma is ``cfg.sigma_guess`` or is bootstrapped: a first pass with sigma
    from the bipower variation, then sigma re-estimated from the truncated
    realized variance. Bipower keeps heavy-tailed jumps out of the first
    threshold; the realized variance is only used below two increments or
    when bipower is zero.
    """
    if cfg.truncation is not None:
        return cfg.truncation
    if cfg.sigma_guess is not None:
        return TruncationRule(alpha=cfg.truncation_multiple * cfg.sigma_guess, varpi=cfg.varpi)

    initial = multipower_variation(series, 1.0, 2) if len(series) >= 2 else 0.0
    if initial == 0.0:
        initial = power_variation(series, 2.0)
    sigma0 = math.sqrt(initial / series.horizon_t)
    if sigma0 == 0.0:
        raise DegeneratePathError("realized variance is zero: cannot bootstrap the truncation level")
    first = TruncationRule(alpha=cfg.truncation_multiple * sigma0, varpi=cfg.varpi)
    sigma1 = math.sqrt(truncated_variation(series, 2.0, first) / series.horizon_t)
    if sigma1 == 0.0:
        sigma1 = sigma0
    return TruncationRule(alpha=cfg.truncation_multiple * sigma1, varpi=cfg.varpi)


def resolve_window(series: IncrementSeries, cfg: TestConfig) -> int:
    if cfg.window_kn != "auto":
        return int(cfg.window_kn)
    return default_window(cfg.units.to_window_unit(series.delta))


def variance_jump_null(series: IncrementSeries, cfg: TestConfig, rule: Optional[TruncationRule] = None) -> float:
    """
    Variance estimate V-hat^j of S-hat on paths with jumps.

    Args:
        series: observed increments
        cfg: test configuration (p > 3)
        rule: truncation rule; resolved from cfg when omitted

    Returns:
        delta (k-1) p^2 D-hat(2p-2) / (2 B-hat(p)^2)
    """
    p, k = cfg.p, cfg.k
    if not p > 3:
        raise DomainError(f"the jump-null variance needs p > 3, got {p}")
    b = power_variation(series, p)
    if b == 0.0:
        raise DegeneratePathError("power variation is zero: constant observed path")
    rule = rule or resolve_truncation(series, cfg)
    d = local_jump_variance(series, 2 * p - 2, resolve_window(series, cfg), rule)
    return series.delta * (k - 1) * p * p * d / (2.0 * b * b)


def variance_nojump_null(series: IncrementSeries, cfg: TestConfig, rule: Optional[TruncationRule] = None) -> float:
    """
    Variance estimate V-hat^c of S-hat on continuous paths.

    The truncated variant uses A-hat(2p) / A-hat(p)^2; the multipower variant
    uses r = p/([p]+1) with q = 2[p]+2 over q = [p]+1 squared.

    Args:
        series: observed increments
        cfg: test configuration (p >= 2)
        rule: truncation rule for the truncated variant; resolved from cfg when omitted

    Returns:
        delta * M(p, k) * numerator / denominator^2
    """
    p, k = cfg.p, cfg.k
    scale = series.delta * variance_scale_M(p, k)
    if cfg.variance_estimator == "truncated":
        rule = rule or resolve_truncation(series, cfg)
        numerator = truncated_variation(series, 2 * p, rule)
        denominator = truncated_variation(series, p, rule)
    else:
        whole = int(math.floor(p))
        r = p / (whole + 1)
        numerator = multipower_variation(series, r, 2 * whole + 2)
        denominator = multipower_variation(series, r, whole + 1)
    if denominator == 0.0:
        raise DegeneratePathError(f"{cfg.variance_estimator} variation in the variance denominator is zero")
    return scale * numerator / (denominator * denominator)


def no_jump_cutoff(variance: float, p: float, k: int, level: float) -> float:
    """k^{p/2-1} - z_level * sqrt(V)."""
    return float(k) ** (p / 2.0 - 1.0) - normal_quantile(level) * math.sqrt(variance)


def jump_cutoff(variance: float, level: float, style: CutoffStyle = "gaussian") -> float:
    """1 + sqrt(V / level) (chebyshev, level at most alpha) or 1 + z_level sqrt(V) (gaussian)."""
    if style == "chebyshev":
        if not 0 < level < 1:
            raise DomainError(f"level must lie in (0, 1), got {level}")
        return 1.0 + math.sqrt(variance / level)
    if style == "gaussian":
        return 1.0 + normal_quantile(level) * math.sqrt(variance)
    raise ConfigError(f"unknown cutoff style {style!r}")


def _standardize(statistic: float, center: float, variance: float) -> Optional[float]:
    if variance == 0.0:
        return None
    return (statistic - center) / math.sqrt(variance)


def check_config(cfg: TestConfig, null: NullHypothesis) -> None:
    """Raise ConfigError when cfg cannot run the given null."""
    if not cfg.p > 3:
        raise ConfigError(f"p must exceed 3 to run the tests, got {cfg.p}")
    varpi = cfg.truncation.varpi if cfg.truncation is not None else cfg.varpi
    if null == "no_jumps" and cfg.variance_estimator == "truncated":
        lower = 0.5 - 1.0 / cfg.p
        if not lower < varpi < 0.5:
            raise ConfigError(
                f"truncated estimator under the no-jump null needs {lower:.4f} < varpi < 0.5, got {varpi}"
            )


def jump_variation_share(series: IncrementSeries, rule: TruncationRule) -> float:
    """Share of realized quadratic variation due to jumps, 1 - A-hat(2) / B-hat(2), clipped to [0, 1]."""
    qv = power_variation(series, 2.0)
    if qv == 0.0:
        raise DegeneratePathError("realized variance is zero: constant observed path")
    return min(1.0, max(0.0, 1.0 - truncated_variation(series, 2.0, rule) / qv))


def test_no_jump_null(series: IncrementSeries, cfg: TestConfig) -> TestResult:
    """
    Test H0: the path is continuous. Rejects when S-hat < k^{p/2-1} - z_level sqrt(V-hat^c).

    Args:
        series: observed increments
        cfg: test configuration

    Returns:
        TestResult with null "no_jumps"
    """
    check_config(cfg, "no_jumps")
    rule = resolve_truncation(series, cfg)
    statistic = switch_statistic(series, cfg.p, cfg.k)
    variance = variance_nojump_null(series, cfg, rule)
    cutoff = no_jump_cutoff(variance, cfg.p, cfg.k, cfg.level)
    center = float(cfg.k) ** (cfg.p / 2.0 - 1.0)
    result = TestResult(
        statistic=statistic,
        variance=variance,
        cutoff=cutoff,
        reject=statistic < cutoff,
        null="no_jumps",
        n=len(series),
        standardized=_standardize(statistic, center, variance),
        p=cfg.p,
        k=cfg.k,
        level=cfg.level,
        delta=series.delta,
        variance_estimator=cfg.variance_estimator,
        truncation_alpha=rule.alpha,
        truncation_varpi=rule.varpi,
        jump_share=jump_variation_share(series, rule),
    )
    logger.debug("no-jump null: S=%.6f V=%.3g cutoff=%.6f reject=%s", statistic, variance, cutoff, result.reject)
    return result


def test_jump_null(series: IncrementSeries, cfg: TestConfig, cutoff_style: CutoffStyle = "gaussian") -> TestResult:
    """
    Test H0: the path has jumps. Rejects when S-hat > 1 + c * sqrt(V-hat^j).

    Args:
        series: observed increments
        cfg: test configuration
        cutoff_style: "chebyshev" (level at most alpha) or "gaussian" (level alpha
            when X and sigma have no common jumps)

    Returns:
        TestResult with null "jumps"
    """
    check_config(cfg, "jumps")
    rule = resolve_truncation(series, cfg)
    window = resolve_window(series, cfg)
    statistic = switch_statistic(series, cfg.p, cfg.k)
    variance = variance_jump_null(series, cfg, rule)
    cutoff = jump_cutoff(variance, cfg.level, cutoff_style)
    result = TestResult(
        statistic=statistic,
        variance=variance,
        cutoff=cutoff,
        reject=statistic > cutoff,
        null="jumps",
        n=len(series),
        standardized=_standardize(statistic, 1.0, variance),
        p=cfg.p,
        k=cfg.k,
        level=cfg.level,
        delta=series.delta,
        cutoff_style=cutoff_style,
        truncation_alpha=rule.alpha,
        truncation_varpi=rule.varpi,
        window_kn=window,
        jump_share=jump_variation_share(series, rule),
    )
    logger.debug("jump null: S=%.6f V=%.3g cutoff=%.6f reject=%s", statistic, variance, cutoff, result.reject)
    return result


test_no_jump_null.__test__ = False
test_jump_null.__test__ = False


def run_tests(
    series: IncrementSeries,
    cfg: TestConfig,
    nulls: Iterable[NullHypothesis] = ("no_jumps", "jumps"),
    cutoff_style: CutoffStyle = "gaussian",
) -> List[TestResult]:
    """Run the requested nulls in order on one series."""
    results = []
    for null in nulls:
        if null == "no_jumps":
            results.append(test_no_jump_null(series, cfg))
        elif null == "jumps":
            results.append(test_jump_null(series, cfg, cutoff_style))
        else:
            raise ConfigError(f"unknown null hypothesis {null!r}")
    return results


def consistent_decision(statistic: float, p: float = 4.0, k: int = 2, threshold: Optional[float] = None) -> str:
    """
    Non-standardized consistent decision rule: "jumps" iff S-hat < a.

    Args:
        statistic: S-hat(p, k, delta)
        p, k: power and scale ratio of the statistic
        threshold: a in (1, k^{p/2-1}); midpoint of that interval by default

    Returns:
        "jumps" or "continuous"
    """
    upper = float(k) ** (p / 2.0 - 1.0)
    a = (1.0 + upper) / 2.0 if threshold is None else threshold
    if not 1.0 < a < upper:
        raise DomainError(f"threshold must lie in (1, {upper}), got {a}")
    return "jumps" if statistic < a else "continuous"


def noise_limit(k: int) -> float:
    """Limit 1/k of S-hat'(4, k) when i.i.d. additive noise dominates."""
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    return 1.0 / k
