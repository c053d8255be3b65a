"""
Tick files to increment series: load, clean, resample on a calendar-time grid.

Timestamps are held as UTC epoch seconds. Epoch input is UTC; ISO strings with
an offset are converted to UTC; ISO strings without one are wall-clock times in
the session timezone. The session grid is laid on the local calendar day of the
first tick, at the session hours in that timezone.
"""

import logging
import os
from dataclasses import dataclass
from datetime import date, datetime, time
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
import requests
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import TimeUnits
from errors import EmptySessionError, IngestError
from variation import IncrementSeries

logger = logging.getLogger(__name__)

TICK_COLUMNS = ["timestamp", "price", "line"]
DEFAULT_TIMEZONE = "America/New_York"

NONPOSITIVE_PRICE = "nonpositive_price"
BOUNCE_OUTLIER = "bounce_outlier"


class SessionSpec(BaseModel):
    """Trading session and sampling interval; a trailing partial interval is dropped."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    open: time = time(9, 30)
    close: time = time(16, 0)
    sample_seconds: int = Field(5, gt=0)
    timezone: str = DEFAULT_TIMEZONE

    @field_validator("timezone")
    @classmethod
    def _known_timezone(cls, v: str) -> str:
        try:
            pd.Timestamp("2000-01-01").tz_localize(v)
        except Exception as e:
            raise ValueError(f"unknown timezone {v!r}") from e
        return v

    @model_validator(mode="after")
    def _open_before_close(self):
        if not self.open < self.close:
            raise ValueError(f"session open {self.open} must precede close {self.close}")
        return self

    def open_epoch(self, day: date) -> float:
        """UTC epoch seconds of the session open on a local calendar day."""
        return pd.Timestamp(datetime.combine(day, self.open)).tz_localize(self.timezone).timestamp()

    def local_day(self, epoch_seconds: float) -> date:
        """Calendar day, in the session timezone, of a UTC epoch time."""
        return pd.Timestamp(epoch_seconds, unit="s", tz="UTC").tz_convert(self.timezone).date()

    @property
    def open_seconds(self) -> float:
        return self.open.hour * 3600.0 + self.open.minute * 60.0 + self.open.second

    @property
    def length_seconds(self) -> float:
        close = self.close.hour * 3600.0 + self.close.minute * 60.0 + self.close.second
        return close - self.open_seconds

    @property
    def n_intervals(self) -> int:
        return int(self.length_seconds // self.sample_seconds)


class IngestSummary(BaseModel):
    n_ticks: int = 0
    malformed_lines: List[int] = []
    reordered: int = 0
    dropped: int = 0
    dropped_by_reason: Dict[str, int] = {}
    flagged_grid_points: int = 0
    sample_seconds: Optional[int] = None
    delta: Optional[float] = None
    time_unit: Optional[str] = None
    timezone: Optional[str] = None


@dataclass(frozen=True)
class LoadedTicks:
    ticks: pd.DataFrame
    malformed_lines: List[int]
    reordered: int


@dataclass(frozen=True)
class ResampledSession:
    series: IncrementSeries
    grid_times: np.ndarray
    grid_prices: np.ndarray
    flagged_grid_points: int


def download_source(url: str, output_dir: Optional[str] = None) -> Union[str, bytes]:
    """
    Download a tick file.

    Args:
        url: http(s) URL of the CSV
        output_dir: Optional directory to save the file. If None, returns bytes.

    Returns:
        File path if output_dir specified, otherwise bytes
    """
    try:
        response = requests.get(url, timeout=30)
        response.raise_for_status()
    except requests.RequestException as e:
        raise IngestError(f"cannot download {url}: {e}") from e

    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
        file_path = os.path.join(output_dir, "ticks.csv")
        with open(file_path, "wb") as f:
            f.write(response.content)
        return file_path

    return response.content


def resolve_source(source: str, output_dir: str) -> str:
    """URL or local path to a readable local path."""
    if source.startswith(("http://", "https://")):
        return download_source(source, output_dir)
    if not os.path.exists(source):
        raise IngestError(f"tick file not found: {source}")
    return source


def _parse_timestamps(raw: pd.Series, timezone: str) -> pd.Series:
    # epoch seconds if most entries are numeric, ISO-8601 otherwise
    numeric = pd.to_numeric(raw, errors="coerce")
    if numeric.notna().sum() * 2 >= raw.notna().sum() and numeric.notna().any():
        return numeric.astype(np.float64)
    try:
        parsed = pd.to_datetime(raw, errors="coerce", format="ISO8601")
    except ValueError:
        parsed = None
    if parsed is None or parsed.dtype == object:
        # mixed offsets
        parsed = pd.to_datetime(raw, errors="coerce", format="ISO8601", utc=True)
    if isinstance(parsed.dtype, pd.DatetimeTZDtype):
        parsed = parsed.dt.tz_convert("UTC")
    else:
        parsed = parsed.dt.tz_localize(timezone, ambiguous="NaT", nonexistent="NaT").dt.tz_convert("UTC")
    seconds = (parsed - pd.Timestamp(0, tz="UTC")) / pd.Timedelta(seconds=1)
    return seconds.astype(np.float64)


def load_ticks(
    source: Union[str, Path],
    max_malformed_fraction: float = 0.01,
    timezone: str = DEFAULT_TIMEZONE,
) -> LoadedTicks:
    """
    Read a ``timestamp,price`` CSV into a sorted tick frame.

    Rows with price 0 or below are kept here and dropped by ``clean_ticks``.

    Args:
        source: local CSV path
        max_malformed_fraction: share of unparseable rows tolerated before failing
        timezone: zone of ISO timestamps written without an offset

    Returns:
        LoadedTicks with columns timestamp (UTC epoch seconds), price and line (1-based file line)
    """
    try:
        raw = pd.read_csv(source, dtype=str, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return LoadedTicks(pd.DataFrame(columns=TICK_COLUMNS), [], 0)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as e:
        raise IngestError(f"cannot read tick file {source}: {e}") from e

    raw.columns = [str(c).strip().lower() for c in raw.columns]
    missing = {"timestamp", "price"} - set(raw.columns)
    if missing:
        raise IngestError(f"{source}: missing column(s) {sorted(missing)}")
    if raw.empty:
        return LoadedTicks(pd.DataFrame(columns=TICK_COLUMNS), [], 0)

    frame = pd.DataFrame({
        "timestamp": _parse_timestamps(raw["timestamp"], timezone),
        "price": pd.to_numeric(raw["price"], errors="coerce"),
        "line": np.arange(len(raw)) + 2,  # header is line 1
    })
    bad = frame["timestamp"].isna() | frame["price"].isna()
    malformed = frame.loc[bad, "line"].tolist()
    if len(malformed) > max_malformed_fraction * len(frame):
        raise IngestError(
            f"{source}: {len(malformed)} of {len(frame)} rows unparseable (lines {malformed[:10]})"
        )
    if malformed:
        logger.warning("%s: skipped %d malformed rows (lines %s)", source, len(malformed), malformed[:10])
    frame = frame.loc[~bad]

    ts = frame["timestamp"].to_numpy()
    reordered = int(np.sum(ts[1:] < np.maximum.accumulate(ts)[:-1])) if len(ts) > 1 else 0
    if reordered:
        logger.info("%s: %d out-of-order rows sorted", source, reordered)
    frame = frame.sort_values("timestamp", kind="stable").reset_index(drop=True)
    return LoadedTicks(frame, malformed, reordered)


def clean_ticks(ticks: pd.DataFrame, outlier_multiple: float = 10.0) -> Tuple[pd.DataFrame, List[Dict]]:
    """
    Drop nonpositive prices and single-tick bounce-back outliers.

    A tick is a bounce-back outlier when the log-return into it and the one
    out of it both exceed ``outlier_multiple`` times the median nonzero
    absolute log-return, with opposite signs.

    Args:
        ticks: sorted tick frame from load_ticks
        outlier_multiple: outlier threshold in median absolute log-returns

    Returns:
        (kept ticks, rejection log with one entry per dropped tick)
    """
    log = []
    nonpositive = ticks["price"] <= 0
    for row in ticks.loc[nonpositive].itertuples(index=False):
        log.append({"line": int(row.line), "timestamp": float(row.timestamp), "price": float(row.price),
                    "reason": NONPOSITIVE_PRICE})
    kept = ticks.loc[~nonpositive].reset_index(drop=True)

    if len(kept) >= 3:
        returns = np.diff(np.log(kept["price"].to_numpy(dtype=np.float64)))
        moves = np.abs(returns[returns != 0])
        if moves.size:
            limit = outlier_multiple * float(np.median(moves))
            into, out_of = returns[:-1], returns[1:]
            spike = (np.abs(into) > limit) & (np.abs(out_of) > limit) & (np.sign(into) != np.sign(out_of))
            outlier = np.concatenate([[False], spike, [False]])
            for row in kept.loc[outlier].itertuples(index=False):
                log.append({"line": int(row.line), "timestamp": float(row.timestamp), "price": float(row.price),
                            "reason": BOUNCE_OUTLIER})
            kept = kept.loc[~outlier].reset_index(drop=True)

    log.sort(key=lambda entry: entry["line"])
    if log:
        logger.info("dropped %d ticks during cleaning", len(log))
    return kept, log


def session_start(ticks: pd.DataFrame, session: SessionSpec) -> float:
    """Session open, in UTC epoch seconds, on the local calendar day of the first tick."""
    return session.open_epoch(session.local_day(float(ticks["timestamp"].iloc[0])))


def resample_previous_tick(
    ticks: pd.DataFrame,
    session: SessionSpec,
    units: TimeUnits = TimeUnits(),
) -> ResampledSession:
    """
    Sample log-prices on the session grid with the previous-tick rule.

    Each grid time open + i * sample_seconds takes the last trade at or before
    it. Grid points before the first trade are flagged and skipped; the series
    starts at the first grid point that has a trade.

    Args:
        ticks: cleaned, sorted ticks
        session: session hours and sampling interval
        units: time unit for the series delta

    Returns:
        ResampledSession with the log-price increment series
    """
    if ticks.empty:
        raise EmptySessionError("no usable ticks")
    start = session_start(ticks, session)
    grid = start + session.sample_seconds * np.arange(session.n_intervals + 1, dtype=np.float64)
    ts = ticks["timestamp"].to_numpy(dtype=np.float64)
    idx = np.searchsorted(ts, grid, side="right") - 1
    flagged = int(np.sum(idx < 0))
    valid = idx >= 0
    if valid.sum() < 2:
        raise EmptySessionError(f"fewer than two grid points of the session have a preceding trade (flagged {flagged})")
    if flagged:
        logger.info("%d leading grid points precede the first trade", flagged)

    prices = ticks["price"].to_numpy(dtype=np.float64)[idx[valid]]
    increments = np.diff(np.log(prices))
    delta = units.seconds_to_unit(session.sample_seconds)
    series = IncrementSeries(increments, delta, len(increments) * delta)
    return ResampledSession(series, grid[valid], prices, flagged)


def ingest_file(
    source: Union[str, Path],
    session: SessionSpec = SessionSpec(),
    units: TimeUnits = TimeUnits(),
    outlier_multiple: float = 10.0,
    max_malformed_fraction: float = 0.01,
) -> Tuple[IncrementSeries, IngestSummary]:
    """
    Load, clean and resample one tick file.

    Returns:
        (increment series, summary of what ingestion did)
    """
    loaded = load_ticks(source, max_malformed_fraction, session.timezone)
    cleaned, rejections = clean_ticks(loaded.ticks, outlier_multiple)
    resampled = resample_previous_tick(cleaned, session, units)
    by_reason: Dict[str, int] = {}
    for entry in rejections:
        by_reason[entry["reason"]] = by_reason.get(entry["reason"], 0) + 1
    summary = IngestSummary(
        n_ticks=len(loaded.ticks),
        malformed_lines=loaded.malformed_lines,
        reordered=loaded.reordered,
        dropped=len(rejections),
        dropped_by_reason=by_reason,
        flagged_grid_points=resampled.flagged_grid_points,
        sample_seconds=session.sample_seconds,
        delta=resampled.series.delta,
        time_unit=units.unit,
        timezone=session.timezone,
    )
    logger.info("%s: %d ticks, %d dropped, %d increments", source, summary.n_ticks, summary.dropped, len(resampled.series))
    return resampled.series, summary


def ticks_from_path(
    times: np.ndarray,
    prices: np.ndarray,
    session: SessionSpec = SessionSpec(),
    units: TimeUnits = TimeUnits(),
    session_day: str = "2024-01-02",
) -> pd.DataFrame:
    """
    Lay a simulated path on a session as a ``timestamp,price`` frame (UTC epoch seconds).

    Args:
        times: observation times in the configured unit, starting at 0
        prices: prices at those times
        session: session whose open anchors time 0
        units: unit of ``times``
        session_day: local calendar day of the session
    """
    open_epoch = session.open_epoch(pd.Timestamp(session_day).date())
    seconds = np.array([units.unit_to_days(t) for t in times]) * units.seconds_per_day
    # grid times come out of a float product; round to the microsecond so they sit exactly on the grid
    timestamps = np.round(open_epoch + seconds, 6)
    return pd.DataFrame({"timestamp": timestamps, "price": np.asarray(prices, dtype=np.float64)})
