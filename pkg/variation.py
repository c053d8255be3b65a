"""
Realized measures built from a regular grid of observed increments.

All sums go through ``np.sum`` on contiguous float64 arrays, which uses
pairwise summation; the switch statistic compares two nearly equal sums.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import TruncationRule
from errors import DegeneratePathError, DomainError, InsufficientDataError
from moments import gaussian_abs_moment

logger = logging.getLogger(__name__)

__all__ = [
    "IncrementSeries",
    "TruncationRule",
    "subsample",
    "power_variation",
    "switch_statistic",
    "truncated_variation",
    "multipower_variation",
    "local_jump_variance",
    "default_window",
    "realized_limit",
]

# tolerance when flooring t / delta, so 1/252 over 5-second steps gives 4680 and not 4679
_GRID_EPS = 1e-9


@dataclass(frozen=True)
class IncrementSeries:
    """
    Observed increments on a regular grid.

    Only the first floor(horizon_t / delta) increments are kept; the array is
    made read-only so a series can be shared between threads.
    """
    increments: np.ndarray
    delta: float
    horizon_t: float = field(default=None)

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        values = np.array(self.increments, dtype=np.float64).ravel()
        horizon = self.horizon_t if self.horizon_t is not None else len(values) * self.delta
        if not horizon > 0:
            raise DomainError(f"horizon_t must be positive, got {horizon}")
        n = int(math.floor(horizon / self.delta + _GRID_EPS))
        if len(values) < n:
            raise InsufficientDataError(
                f"horizon {horizon} needs {n} increments at delta {self.delta}, got {len(values)}"
            )
        values = np.ascontiguousarray(values[:n])
        values.setflags(write=False)
        object.__setattr__(self, "increments", values)
        object.__setattr__(self, "horizon_t", float(horizon))
        object.__setattr__(self, "delta", float(self.delta))

    def __len__(self) -> int:
        return len(self.increments)

    def scaled(self, c: float) -> "IncrementSeries":
        return IncrementSeries(self.increments * c, self.delta, self.horizon_t)


def subsample(series: IncrementSeries, k: int) -> IncrementSeries:
    """
    Increments between successive multiples of k*delta; the trailing partial block is dropped.

    Args:
        series: fine-grid increments
        k: integer block length, >= 2

    Returns:
        Coarse-grid series with delta' = k*delta and the same horizon
    """
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    k = int(k)
    m = len(series) // k
    sums = series.increments[: m * k].reshape(m, k).sum(axis=1)
    return IncrementSeries(sums, series.delta * k, series.horizon_t)


def power_variation(series: IncrementSeries, p: float) -> float:
    """Sum of |dX|^p over the series (0 for an empty series)."""
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    if len(series) == 0:
        return 0.0
    return float(np.sum(np.abs(series.increments) ** p))


def switch_statistic(series: IncrementSeries, p: float, k: int) -> float:
    """
    Ratio of the coarse-grid to the fine-grid p-th power variation.

    Tends to 1 on paths with jumps and to k^{p/2-1} on continuous paths.
    """
    if not p > 2:
        raise DomainError(f"switch statistic needs p > 2, got {p}")
    fine = power_variation(series, p)
    if fine == 0.0:
        raise DegeneratePathError("power variation is zero: constant observed path")
    coarse = power_variation(subsample(series, k), p)
    return coarse / fine


def truncated_variation(series: IncrementSeries, p: float, rule: TruncationRule) -> float:
    """
    Truncated p-th variation, rescaled to estimate the integral of |sigma|^p.

    Args:
        series: observed increments
        p: power, >= 2
        rule: truncation level alpha * delta**varpi

    Returns:
        (delta^{1-p/2} / m_p) * sum |dX|^p over increments below the threshold
    """
    if not p >= 2:
        raise DomainError(f"truncated variation needs p >= 2, got {p}")
    x = np.abs(series.increments)
    kept = x[x <= rule.threshold(series.delta)]
    scale = series.delta ** (1.0 - p / 2.0) / gaussian_abs_moment(p)
    return float(scale * np.sum(kept ** p))


def multipower_variation(series: IncrementSeries, r: float, q: int) -> float:
    """
    Multipower variation from products of q consecutive |dX|^r.

    Args:
        series: observed increments
        r: power of each factor, in (0, 2)
        q: number of consecutive factors, >= 1

    Returns:
        (delta^{1-qr/2} / m_r^q) * sum_i prod_j |dX_{i+j-1}|^r
    """
    if not 0 < r < 2:
        raise DomainError(f"multipower variation needs 0 < r < 2, got {r}")
    if int(q) != q or q < 1:
        raise DomainError(f"q must be an integer >= 1, got {q}")
    q = int(q)
    if len(series) < q:
        raise InsufficientDataError(f"multipower variation with q={q} needs at least {q} increments, got {len(series)}")
    powered = np.abs(series.increments) ** r
    products = sliding_window_view(powered, q).prod(axis=1)
    scale = series.delta ** (1.0 - q * r / 2.0) / gaussian_abs_moment(r) ** q
    return float(scale * np.sum(products))


def local_jump_variance(series: IncrementSeries, p: float, window_kn: int, rule: TruncationRule) -> float:
    """
    Local-window estimator D-hat(p) of sum |dX_s|^p (sigma_{s-}^2 + sigma_s^2).

    For each increment i the truncated squared increments at distance 1..kn on
    either side are summed; windows are clipped at the ends of the series.

    Args:
        series: observed increments
        p: power applied to the centre increment, > 0
        window_kn: half-width of the window, >= 1
        rule: truncation applied to the neighbouring increments

    Returns:
        D-hat(p, delta)_t, nonnegative
    """
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    if int(window_kn) != window_kn or window_kn < 1:
        raise DomainError(f"window_kn must be an integer >= 1, got {window_kn}")
    kn = int(window_kn)
    n = len(series)
    if n < 2:
        return 0.0
    x = series.increments
    truncated_sq = np.where(np.abs(x) <= rule.threshold(series.delta), x * x, 0.0)
    full = np.convolve(truncated_sq, np.ones(2 * kn + 1))
    neighbours = np.maximum(full[kn: kn + n] - truncated_sq, 0.0)
    total = np.sum(np.abs(x) ** p * neighbours)
    return float(total / (kn * series.delta))


def default_window(delta: float) -> int:
    """
    Automatic window ceil(50 * delta^{-1/4}), delta already in the window unit.

    Examples: 1 -> 50, 1/16 -> 100, 1/23400 -> 619.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    return max(1, int(math.ceil(round(50.0 * delta ** -0.25, 9))))


def realized_limit(series: IncrementSeries, p: float, rule: Optional[TruncationRule] = None) -> float:
    """
    Normalized power variation (delta^{1-p/2} / m_p) * B-hat(p).

    Converges to the integral of |sigma|^p on continuous paths. With a rule
    this is exactly the truncated variation.
    """
    if rule is not None:
        return truncated_variation(series, p, rule)
    return series.delta ** (1.0 - p / 2.0) / gaussian_abs_moment(p) * power_variation(series, p)
