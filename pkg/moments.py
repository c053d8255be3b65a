"""
Gaussian moment constants used by the asymptotic-variance formulas.

Even-integer orders are computed exactly from double factorials. Other orders
go through the Gamma function, and cross moments through the closed form for
absolute moments of a bivariate normal pair. Gauss-Hermite quadrature with a
chosen node count stays available as a cross-check; its error decays only
algebraically for non-even p because |u|^p has a kink at 0.
"""

import math
from functools import lru_cache
from typing import Dict, Optional

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.special import gamma, hyp2f1

from errors import DomainError

def _is_even_integer(x: float) -> bool:
    return float(x).is_integer() and int(x) % 2 == 0


def _double_factorial_odd(r: int) -> float:
    # (r-1)!! for even r; (−1)!! = 1 covers r = 0
    return float(math.prod(range(r - 1, 0, -2)))


@lru_cache(maxsize=None)
def gaussian_abs_moment(r: float) -> float:
    """
    r-th absolute moment E|U|^r of a standard normal U.

    Args:
        r: order, strictly positive

    Returns:
        pi^{-1/2} 2^{r/2} Gamma((r+1)/2); exactly (r-1)!! for even integer r
    """
    if not r > 0:
        raise DomainError(f"moment order must be positive, got {r}")
    if _is_even_integer(r):
        return _double_factorial_odd(int(r))
    return float(2.0 ** (r / 2.0) * gamma((r + 1.0) / 2.0) / math.sqrt(math.pi))


def _cross_moment_exact(k: int, p: int) -> float:
    # E[U^p (U + aV)^p] expanded binomially; odd powers of V vanish
    a2 = float(k - 1)
    total = 0.0
    for j in range(0, p + 1, 2):
        v_moment = _double_factorial_odd(j) if j > 0 else 1.0
        total += math.comb(p, j) * a2 ** (j // 2) * _double_factorial_odd(2 * p - j) * v_moment
    return total


def _cross_moment_closed_form(k: int, p: float) -> float:
    # U and U + sqrt(k-1) V are centred normals with variances 1 and k and correlation 1/sqrt(k)
    return float(k ** (p / 2.0) * 2.0 ** p / math.pi * gamma((p + 1.0) / 2.0) ** 2
                 * hyp2f1(-p / 2.0, -p / 2.0, 0.5, 1.0 / k))


def _cross_moment_quadrature(k: int, p: float, nodes: int) -> float:
    x, w = hermegauss(nodes)
    w = w / math.sqrt(2.0 * math.pi)
    a = math.sqrt(k - 1.0)
    u = x[:, None]
    v = x[None, :]
    integrand = np.abs(u) ** p * np.abs(u + a * v) ** p
    return float(w @ integrand @ w)


@lru_cache(maxsize=None)
def gaussian_cross_moment(k: int, p: float, nodes: Optional[int] = None, exact: bool = True) -> float:
    """
    Cross moment m_{k,p} = E(|U|^p |U + sqrt(k-1) V|^p) for independent standard normals.

    Args:
        k: scale ratio, integer >= 2
        p: power, > 0
        nodes: Gauss-Hermite nodes per axis; None uses the closed form
            k^{p/2} 2^p Gamma((p+1)/2)^2 2F1(-p/2, -p/2; 1/2; 1/k) / pi
        exact: use the exact polynomial expansion when p is an even integer

    Returns:
        The moment value
    """
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    if not p > 0:
        raise DomainError(f"p must be positive, got {p}")
    if nodes is not None and nodes < 1:
        raise DomainError(f"nodes must be >= 1, got {nodes}")
    if exact and _is_even_integer(p):
        return _cross_moment_exact(int(k), int(p))
    if nodes is not None:
        return _cross_moment_quadrature(int(k), float(p), int(nodes))
    return _cross_moment_closed_form(int(k), float(p))


@lru_cache(maxsize=None)
def variance_scale_M(p: float, k: int) -> float:
    """
    Constant M(p, k) in the asymptotic variance of the switch statistic on continuous paths.

    Args:
        p: power, >= 2
        k: scale ratio, integer >= 2

    Returns:
        (k^{p-2}(1+k) m_{2p} + k^{p-2}(k-1) m_p^2 - 2 k^{p/2-1} m_{k,p}) / m_p^2
    """
    if not p >= 2:
        raise DomainError(f"M(p, k) needs p >= 2, got {p}")
    if int(k) != k or k < 2:
        raise DomainError(f"k must be an integer >= 2, got {k}")
    m_p = gaussian_abs_moment(p)
    m_2p = gaussian_abs_moment(2 * p)
    m_kp = gaussian_cross_moment(int(k), p)
    kp2 = float(k) ** (p - 2)
    value = (kp2 * (1 + k) * m_2p + kp2 * (k - 1) * m_p ** 2 - 2 * float(k) ** (p / 2 - 1) * m_kp) / m_p ** 2
    return float(value)


def variance_scale_M_p4(k: int) -> float:
    """Closed form of M(4, k) = 16k(2k^2 - k - 1)/3."""
    return 16.0 * k * (2 * k * k - k - 1) / 3.0


def moments_table(p: float, k: int) -> Dict[str, float]:
    """All constants the test uses for a given (p, k), keyed for printing."""
    return {
        "m_p": gaussian_abs_moment(p),
        "m_2p": gaussian_abs_moment(2 * p),
        "m_kp": gaussian_cross_moment(int(k), p),
        "M": variance_scale_M(p, k),
    }
