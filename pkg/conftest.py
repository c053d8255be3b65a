import numpy as np
import pandas as pd
import pytest

from config import TestConfig, TimeUnits
from simulate import PathSpec, SVParams
from variation import IncrementSeries

SECOND = 1.0 / (252 * 23400)
SESSION_DAY = "2024-01-02"
SIGMA = 0.4


@pytest.fixture
def units():
    return TimeUnits()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def test_config():
    return TestConfig()


@pytest.fixture
def brownian_series(rng):
    """One day of 1-second Brownian increments at 40% annual volatility."""
    n = 23400
    return IncrementSeries(SIGMA * np.sqrt(SECOND) * rng.standard_normal(n), SECOND)


@pytest.fixture
def jump_series(rng):
    """Same diffusion with a single 5% jump in the middle of the day."""
    n = 23400
    x = SIGMA * np.sqrt(SECOND) * rng.standard_normal(n)
    x[n // 2] += 0.05
    return IncrementSeries(x, SECOND)


@pytest.fixture
def continuous_sv():
    return SVParams(beta=0.16, gamma=0.5, kappa=5.0, rho=-0.5)


@pytest.fixture
def coarse_spec(continuous_sv):
    """Cheap path spec: one-minute sampling, one substep."""
    return PathSpec.from_grid(60, seed=11, substeps=1, sv=continuous_sv)


@pytest.fixture
def session_open_epoch():
    """UTC epoch seconds of 09:30 New York time on the session day."""
    return pd.Timestamp(f"{SESSION_DAY} 09:30", tz="America/New_York").timestamp()


@pytest.fixture
def write_ticks(tmp_path):
    """Write a timestamp,price CSV and return its path."""
    def _write(timestamps, prices, name="ticks.csv"):
        target = tmp_path / name
        pd.DataFrame({"timestamp": timestamps, "price": prices}).to_csv(target, index=False)
        return target
    return _write
