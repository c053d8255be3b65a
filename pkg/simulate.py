"""
Data-generating processes for the Monte Carlo studies.

Log-price: d log X = -v/2 dt + sqrt(v) dW, with v a CIR variance
dv = kappa (beta - v) dt + gamma sqrt(v) dB, corr(dW, dB) = rho, simulated by
full-truncation Euler at delta / substeps. Optional overlays:
  - compound Poisson jumps, sizes jump_scale * U on [-2, -1] U [1, 2]
  - Cauchy jumps theta * dY with E exp(iuY_t) = exp(-t|u|/2)
  - proportional Poisson jumps of v, uniform on [-30%, 30%]
  - i.i.d. Gaussian noise on the observed log-price

Each path draws from four independent streams (diffusion, jumps, volatility
jumps, noise) keyed by (root seed, path index, attempt, stream), so a path is
reproducible on its own and switching an overlay off leaves the others untouched.
"""

import logging
import math
from dataclasses import dataclass
from typing import Annotated, Literal, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numba import njit
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import TimeUnits
from errors import ConfigError
from variation import IncrementSeries

logger = logging.getLogger(__name__)

DIFFUSION_STREAM, JUMP_STREAM, VOL_JUMP_STREAM, NOISE_STREAM = range(4)
MAX_CONDITIONING_ATTEMPTS = 10_000
DISCRETIZATION_NOTE = "full-truncation Euler for v, Euler for log X with -v/2 drift, exact jump increments"


class SVParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    beta: float = Field(..., gt=0)
    gamma: float = Field(..., ge=0)
    kappa: float = Field(..., gt=0)
    rho: float = Field(..., ge=-1, le=1)
    v0: Optional[float] = Field(None, gt=0)

    @property
    def initial_variance(self) -> float:
        return self.v0 if self.v0 is not None else self.beta


class PoissonJumpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    kind: Literal["poisson"] = "poisson"
    lam: float = Field(..., ge=0, alias="lambda", description="jumps per day")
    jump_scale: float = Field(..., ge=0)
    condition_on_jump: bool = False


class CauchyParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["cauchy"] = "cauchy"
    theta: float = Field(..., ge=0)


class VolJumpParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    intensity: float = Field(..., ge=0, description="jumps per day")
    max_size: float = Field(0.30, ge=0, lt=1)


class NoiseParams(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    std_dev: float = Field(..., ge=0)


JumpParams = Annotated[Union[PoissonJumpParams, CauchyParams], Field(discriminator="kind")]


class PathSpec(BaseModel):
    """One simulated observation window: model, grid and root seed."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    sv: SVParams
    jumps: Optional[JumpParams] = None
    vol_jumps: Optional[VolJumpParams] = None
    noise: Optional[NoiseParams] = None
    horizon_t: float = Field(..., gt=0)
    delta: float = Field(..., gt=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    substeps: int = Field(10, ge=1)
    initial_price: float = Field(100.0, gt=0)
    units: TimeUnits = TimeUnits()

    @model_validator(mode="after")
    def _grid_fits(self):
        if self.n_intervals < 1:
            raise ValueError(f"horizon {self.horizon_t} holds no interval of length {self.delta}")
        return self

    @property
    def n_intervals(self) -> int:
        return int(math.floor(self.horizon_t / self.delta + 1e-9))

    @classmethod
    def from_grid(cls, sample_seconds: float, horizon_days: float = 1.0, units: TimeUnits = TimeUnits(), **kwargs) -> "PathSpec":
        """Build a spec from a sampling interval in seconds and a horizon in trading days."""
        return cls(
            horizon_t=units.days_to_unit(horizon_days),
            delta=units.seconds_to_unit(sample_seconds),
            units=units,
            **kwargs,
        )


@dataclass(frozen=True)
class SimulatedPath:
    """A simulated window: observed increments plus what generated them."""
    series: IncrementSeries
    times: np.ndarray
    log_prices: np.ndarray
    variance: np.ndarray
    jump_flags: np.ndarray
    jump_count: Optional[int]
    attempts: int = 1

    @property
    def prices(self) -> np.ndarray:
        return np.exp(self.log_prices)

    def to_frame(self) -> pd.DataFrame:
        flags = np.concatenate([[False], self.jump_flags])
        return pd.DataFrame({"time": self.times, "price": self.prices, "jump_flag": flags})

    def to_csv(self, target) -> None:
        self.to_frame().to_csv(target, index=False)


def path_rng(root_seed: int, path_index: int, attempt: int, stream: int) -> np.random.Generator:
    """Independent generator for one stream of one path, by counter-based spawn key."""
    return np.random.default_rng(np.random.SeedSequence(root_seed, spawn_key=(path_index, attempt, stream)))


def correlated_normals(rng: np.random.Generator, size: int, rho: float) -> Tuple[np.ndarray, np.ndarray]:
    """Standard normal draws (dW, dB) with correlation rho."""
    z_b = rng.standard_normal(size)
    z_perp = rng.standard_normal(size)
    z_w = rho * z_b + math.sqrt(1.0 - rho * rho) * z_perp
    return z_w, z_b


@njit(cache=True, nogil=True)
def _sv_kernel(z_w, z_b, vol_factors, v0, kappa, beta, gamma, dt, substeps):
    m = z_w.shape[0]
    log_inc = np.empty(m)
    v_obs = np.empty(m // substeps + 1)
    v_obs[0] = v0
    sqdt = math.sqrt(dt)
    v = v0
    for i in range(m):
        sv = math.sqrt(v)
        log_inc[i] = -0.5 * v * dt + sv * sqdt * z_w[i]
        v_next = (v + kappa * (beta - v) * dt + gamma * sv * sqdt * z_b[i]) * vol_factors[i]
        v = v_next if v_next > 0.0 else 0.0
        if (i + 1) % substeps == 0:
            v_obs[(i + 1) // substeps] = v
    return log_inc, v_obs


def cauchy_increments(theta: float, dt: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """theta times Cauchy(0, dt/2) increments, matching E exp(iuY_t) = exp(-t|u|/2)."""
    return theta * (dt / 2.0) * rng.standard_cauchy(size)


def _poisson_substep_counts(lam_per_unit: float, dt: float, size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.poisson(lam_per_unit * dt, size=size)


def _compound_poisson(jumps: PoissonJumpParams, spec: PathSpec, dt: float, size: int, rng: np.random.Generator):
    counts = _poisson_substep_counts(spec.units.per_day_to_per_unit(jumps.lam), dt, size, rng)
    increments = np.zeros(size)
    total = int(counts.sum())
    if total:
        where = np.repeat(np.nonzero(counts)[0], counts[counts > 0])
        magnitude = rng.uniform(1.0, 2.0, size=total)
        sign = np.where(rng.random(total) < 0.5, -1.0, 1.0)
        np.add.at(increments, where, jumps.jump_scale * sign * magnitude)
    return increments, counts, total


def _vol_jump_factors(vol_jumps: Optional[VolJumpParams], spec: PathSpec, dt: float, size: int, rng: np.random.Generator) -> np.ndarray:
    factors = np.ones(size)
    if vol_jumps is None or vol_jumps.intensity == 0:
        return factors
    counts = _poisson_substep_counts(spec.units.per_day_to_per_unit(vol_jumps.intensity), dt, size, rng)
    total = int(counts.sum())
    if total:
        where = np.repeat(np.nonzero(counts)[0], counts[counts > 0])
        sizes = rng.uniform(-vol_jumps.max_size, vol_jumps.max_size, size=total)
        np.multiply.at(factors, where, 1.0 + sizes)
    return factors


def add_noise(log_prices: np.ndarray, noise: Optional[NoiseParams], seed) -> np.ndarray:
    """
    Add one independent N(0, std_dev^2) draw per observation time.

    Args:
        log_prices: observed (log-)prices at the grid times
        noise: noise parameters; None or std_dev = 0 returns an unchanged copy
        seed: integer seed or numpy Generator

    Returns:
        Perturbed observations
    """
    out = np.array(log_prices, dtype=np.float64)
    if noise is None or noise.std_dev == 0:
        return out
    rng = np.random.default_rng(seed)
    return out + rng.normal(0.0, noise.std_dev, size=out.shape)


def poisson_jump_count(spec: PathSpec, path_index: int = 0, attempt: int = 0) -> int:
    """
    Number of X-jumps on [0, t] in a given path attempt; Poisson(lambda t).

    Draws the jump stream exactly as ``simulate_path`` does, without the diffusion.
    """
    if not isinstance(spec.jumps, PoissonJumpParams):
        return 0
    m = spec.n_intervals * spec.substeps
    dt = spec.delta / spec.substeps
    rng = path_rng(spec.seed, path_index, attempt, JUMP_STREAM)
    counts = _poisson_substep_counts(spec.units.per_day_to_per_unit(spec.jumps.lam), dt, m, rng)
    return int(counts.sum())


def _simulate_attempt(spec: PathSpec, path_index: int, attempt: int) -> SimulatedPath:
    n = spec.n_intervals
    m = n * spec.substeps
    dt = spec.delta / spec.substeps
    sv = spec.sv

    z_w, z_b = correlated_normals(path_rng(spec.seed, path_index, attempt, DIFFUSION_STREAM), m, sv.rho)
    factors = _vol_jump_factors(spec.vol_jumps, spec, dt, m, path_rng(spec.seed, path_index, attempt, VOL_JUMP_STREAM))
    log_inc, v_obs = _sv_kernel(z_w, z_b, factors, sv.initial_variance, sv.kappa, sv.beta, sv.gamma, dt, spec.substeps)
    increments = log_inc.reshape(n, spec.substeps).sum(axis=1)

    jump_rng = path_rng(spec.seed, path_index, attempt, JUMP_STREAM)
    jump_count: Optional[int] = 0
    flags = np.zeros(n, dtype=bool)
    if isinstance(spec.jumps, PoissonJumpParams):
        jump_inc, counts, jump_count = _compound_poisson(spec.jumps, spec, dt, m, jump_rng)
        flags = counts.reshape(n, spec.substeps).sum(axis=1) > 0
        increments[flags] += jump_inc.reshape(n, spec.substeps).sum(axis=1)[flags]
    elif isinstance(spec.jumps, CauchyParams) and spec.jumps.theta > 0:
        jump_inc = cauchy_increments(spec.jumps.theta, dt, m, jump_rng)
        increments = increments + jump_inc.reshape(n, spec.substeps).sum(axis=1)
        flags = np.ones(n, dtype=bool)
        jump_count = None

    log_prices = math.log(spec.initial_price) + np.concatenate([[0.0], np.cumsum(increments)])
    if spec.noise is not None and spec.noise.std_dev > 0:
        log_prices = add_noise(log_prices, spec.noise, path_rng(spec.seed, path_index, attempt, NOISE_STREAM))
        increments = np.diff(log_prices)

    return SimulatedPath(
        series=IncrementSeries(increments, spec.delta, spec.horizon_t),
        times=np.arange(n + 1) * spec.delta,
        log_prices=log_prices,
        variance=v_obs,
        jump_flags=flags,
        jump_count=jump_count,
        attempts=attempt + 1,
    )


def simulate_path(spec: PathSpec, path_index: int = 0) -> SimulatedPath:
    """
    Simulate one path of the model described by spec.

    With Poisson jumps and ``condition_on_jump``, attempts without any jump are
    discarded and regenerated from fresh sub-seeds.

    Args:
        spec: model, grid and root seed
        path_index: index of the path under the root seed

    Returns:
        SimulatedPath with observed increments, log-prices, variance at grid
        times and a per-interval jump indicator
    """
    jumps = spec.jumps
    conditioned = isinstance(jumps, PoissonJumpParams) and jumps.condition_on_jump
    if conditioned and (jumps.lam == 0 or jumps.jump_scale == 0):
        raise ConfigError("condition_on_jump needs a positive jump intensity and jump scale")

    for attempt in range(MAX_CONDITIONING_ATTEMPTS):
        if conditioned and poisson_jump_count(spec, path_index, attempt) == 0:
            continue
        path = _simulate_attempt(spec, path_index, attempt)
        if attempt:
            logger.debug("path %d: %d jump-free attempts regenerated", path_index, attempt)
        return path
    raise ConfigError(f"no path with a jump after {MAX_CONDITIONING_ATTEMPTS} attempts; intensity too low")


def calibrate_poisson_budget(
    total_variance: float,
    jump_share: float,
    lambda_per_day: float,
    units: TimeUnits = TimeUnits(),
) -> Tuple[float, float]:
    """
    Split a total variance sigma^2 + (7/3) J_S^2 lambda between diffusion and jumps.

    Args:
        total_variance: sigma^2 + (7/3) J_S^2 lambda, per configured unit
        jump_share: fraction of the total due to jumps, in [0, 1)
        lambda_per_day: jump intensity

    Returns:
        (beta, jump_scale)
    """
    if not 0 <= jump_share < 1:
        raise ConfigError(f"jump_share must lie in [0, 1), got {jump_share}")
    if not total_variance > 0 or not lambda_per_day > 0:
        raise ConfigError("total_variance and lambda_per_day must be positive")
    beta = (1.0 - jump_share) * total_variance
    lam = units.per_day_to_per_unit(lambda_per_day)
    jump_scale = math.sqrt(3.0 * jump_share * total_variance / (7.0 * lam))
    return beta, jump_scale
