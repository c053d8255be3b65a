"""
Configuration models shared by the estimators, the simulator, the harness,
the CLI and the HTTP service.

Every model is a pydantic model so the same object validates CLI flags,
TOML experiment files and JSON request bodies.
"""

import logging
import os
from typing import Any, Dict, Literal, Optional, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "1"

ModelT = TypeVar("ModelT", bound=BaseModel)


class TimeUnits(BaseModel):
    """
    The single time unit that deltas, horizons and model parameters are expressed in.

    Defaults follow the annualized calibration: 252 trading days a year,
    6.5 trading hours (23400 seconds) a day. ``window_unit`` is the unit in
    which the automatic D-hat window formula reads the sampling interval.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    unit: Literal["years", "days"] = "years"
    trading_days_per_year: float = Field(252.0, gt=0)
    seconds_per_day: float = Field(23400.0, gt=0)
    window_unit: Literal["years", "days"] = "days"

    def days_to_unit(self, days: float) -> float:
        if self.unit == "days":
            return float(days)
        return float(days) / self.trading_days_per_year

    def seconds_to_unit(self, seconds: float) -> float:
        return self.days_to_unit(float(seconds) / self.seconds_per_day)

    def unit_to_days(self, value: float) -> float:
        if self.unit == "days":
            return float(value)
        return float(value) * self.trading_days_per_year

    def per_day_to_per_unit(self, rate_per_day: float) -> float:
        """Convert an intensity quoted per day into events per configured unit."""
        return float(rate_per_day) / self.days_to_unit(1.0)

    def to_window_unit(self, delta: float) -> float:
        days = self.unit_to_days(delta)
        if self.window_unit == "days":
            return days
        return days / self.trading_days_per_year


class TruncationRule(BaseModel):
    """Keeps increments with ``|dX| <= alpha * delta**varpi``."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(..., gt=0)
    varpi: float = Field(..., gt=0, lt=0.5)

    def threshold(self, delta: float) -> float:
        return self.alpha * float(delta) ** self.varpi


class TestConfig(BaseModel):
    """
    Free parameters of the two-scale jump test.

    When ``truncation`` is omitted the truncation level is
    ``truncation_multiple * sigma``, with sigma either ``sigma_guess`` or
    bootstrapped from the data (see ``jumptest.resolve_truncation``).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")
    __test__ = False  # not a pytest class

    p: float = Field(4.0, ge=2)
    k: int = Field(2, ge=2)
    level: float = Field(0.05, gt=0, lt=1)
    truncation: Optional[TruncationRule] = None
    sigma_guess: Optional[float] = Field(None, gt=0)
    truncation_multiple: float = Field(5.0, gt=0)
    varpi: float = Field(0.47, gt=0, lt=0.5)
    window_kn: Union[int, Literal["auto"]] = "auto"
    variance_estimator: Literal["truncated", "multipower"] = "truncated"
    units: TimeUnits = TimeUnits()

    @field_validator("window_kn")
    @classmethod
    def _window_positive(cls, value):
        if value != "auto" and value < 1:
            raise ValueError("window_kn must be >= 1 or 'auto'")
        return value


class ServiceSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    port: int = 8000
    workers: int = Field(1, ge=1)
    time_unit: Literal["years", "days"] = "years"
    log_level: str = "INFO"
    allow_local_paths: bool = False
    expose_tracebacks: bool = False


def validated(model_cls: Type[ModelT], data: Dict[str, Any]) -> ModelT:
    """
    Build a config model, turning pydantic validation failures into ConfigError.

    Args:
        model_cls: pydantic model class to instantiate
        data: raw mapping (TOML table, JSON body, CLI flags)

    Returns:
        The validated model instance
    """
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model_cls.__name__}: {e}") from e


def load_settings() -> ServiceSettings:
    """Read service settings from the environment."""
    return validated(ServiceSettings, {
        "port": os.environ.get("PORT", 8000),
        "workers": os.environ.get("JUMPTEST_WORKERS", 1),
        "time_unit": os.environ.get("JUMPTEST_TIME_UNIT", "years"),
        "log_level": os.environ.get("JUMPTEST_LOG_LEVEL", "INFO"),
        "allow_local_paths": os.environ.get("JUMPTEST_ALLOW_LOCAL_PATHS", "false"),
        "expose_tracebacks": os.environ.get("JUMPTEST_EXPOSE_TRACEBACKS", "false"),
    })


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
