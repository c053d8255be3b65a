"""
Monte Carlo experiments: simulate many paths, test each one, aggregate.

Paths are evaluated on a thread pool; every path owns its random streams and
results are aggregated in path-index order, so a report depends only on the
experiment spec and never on the number of workers.

Batches apply the same aggregation to real tick files: every file is tested at
every sampling interval and S-hat is histogrammed across files.
"""

import copy
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import stats

from config import SCHEMA_VERSION, TestConfig, TimeUnits, validated
from errors import ConfigError, JumpTestError
from ingest import IngestSummary, SessionSpec, ingest_file
from jumptest import CutoffStyle, NullHypothesis, TestResult, jump_cutoff, no_jump_cutoff, run_tests
from simulate import DISCRETIZATION_NOTE, PathSpec, PoissonJumpParams, calibrate_poisson_budget, simulate_path

logger = logging.getLogger(__name__)

REPORT_LEVELS = (0.10, 0.05)
MAX_HISTOGRAM_BINS = 500


class ExperimentSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = ""
    path: PathSpec
    n_paths: int = Field(1000, ge=1)
    test: TestConfig = TestConfig()
    nulls: List[NullHypothesis] = ["no_jumps"]
    cutoff_style: CutoffStyle = "gaussian"
    histogram_bins: Union[int, Literal["fd"]] = "fd"
    keep_per_path: bool = False
    workers: int = Field(1, ge=1)

    @field_validator("nulls")
    @classmethod
    def _nulls_distinct(cls, value):
        if not value or len(set(value)) != len(value):
            raise ValueError("nulls must be a non-empty list without repeats")
        return value

    @field_validator("histogram_bins")
    @classmethod
    def _bins_at_least_two(cls, value):
        if value != "fd" and value < 2:
            raise ValueError("histogram_bins must be >= 2 or 'fd'")
        return value


class Histogram(BaseModel):
    edges: List[float] = []
    counts: List[int] = []

    @property
    def densities(self) -> List[float]:
        total = sum(self.counts)
        widths = np.diff(self.edges)
        if total == 0:
            return [0.0] * len(self.counts)
        return [c / (total * w) if w > 0 else 0.0 for c, w in zip(self.counts, widths)]


class PathRecord(BaseModel):
    index: int
    jump_count: Optional[int]
    attempts: int
    statistic: Optional[float] = None
    results: List[TestResult] = []
    error: Optional[str] = None


class NullSummary(BaseModel):
    null: NullHypothesis
    evaluated: int
    excluded: int
    rejected_10: int
    rejected_5: int
    rejection_rate_10: float
    rejection_rate_5: float
    mc_standard_errors: Dict[str, float]
    mean_standardized: Optional[float] = None
    ks_statistic: Optional[float] = None
    ks_pvalue: Optional[float] = None
    standardized_histogram: Histogram = Histogram()


class ExperimentReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    name: str = ""
    n_paths: int
    evaluated_paths: int
    excluded_paths: int
    mean_statistic: Optional[float]
    rejection_rate_10: float
    rejection_rate_5: float
    mc_standard_errors: Dict[str, float]
    histogram: Histogram
    nulls: Dict[str, NullSummary]
    jump_free_paths: Optional[int]
    jump_free_mean_statistic: Optional[float] = None
    mean_jump_count: Optional[float] = None
    discretization: str = DISCRETIZATION_NOTE
    substeps: int
    per_path: Optional[List[PathRecord]] = None


class DayRecord(BaseModel):
    """One tick file tested at one sampling interval."""
    source: str
    sample_seconds: int
    statistic: Optional[float] = None
    results: List[TestResult] = []
    ingest: Optional[IngestSummary] = None
    error: Optional[str] = None


class FrequencySummary(BaseModel):
    sample_seconds: int
    evaluated: int
    excluded: int
    mean_statistic: Optional[float]
    histogram: Histogram
    nulls: Dict[str, NullSummary]


class BatchReport(BaseModel):
    schema_version: str = SCHEMA_VERSION
    name: str = ""
    n_files: int
    sample_seconds: List[int]
    frequencies: Dict[str, FrequencySummary]
    per_file: Optional[List[DayRecord]] = None


def mc_standard_error(rate: float, n: int) -> float:
    """sqrt(r (1 - r) / n)."""
    if n == 0:
        return 0.0
    return math.sqrt(rate * (1.0 - rate) / n)


def build_histogram(values: Sequence[float], bins: Union[int, str] = "fd") -> Histogram:
    """
    Bin values (Freedman-Diaconis by default); empty input gives an empty histogram.

    Args:
        values: finite sample
        bins: bin count or "fd"

    Returns:
        Histogram with len(edges) == len(counts) + 1
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        return Histogram()
    edges = np.histogram_bin_edges(data, bins=bins)
    if len(edges) - 1 > MAX_HISTOGRAM_BINS:
        # heavy tails make Freedman-Diaconis explode the bin count
        edges = np.histogram_bin_edges(data, bins=MAX_HISTOGRAM_BINS)
    counts, edges = np.histogram(data, bins=edges)
    return Histogram(edges=edges.tolist(), counts=counts.tolist())


def _evaluate_path(spec: ExperimentSpec, index: int) -> PathRecord:
    path = simulate_path(spec.path, index)
    record = PathRecord(index=index, jump_count=path.jump_count, attempts=path.attempts)
    try:
        results = run_tests(path.series, spec.test, spec.nulls, spec.cutoff_style)
    except JumpTestError as e:
        logger.debug("path %d excluded: %s", index, e)
        record.error = f"{type(e).__name__}: {e}"
        return record
    record.results = results
    record.statistic = results[0].statistic
    return record


def _decision(result: TestResult, level: float, cutoff_style: CutoffStyle) -> bool:
    if result.null_hypothesis == "no_jumps":
        return result.statistic < no_jump_cutoff(result.variance, result.p, result.k, level)
    return result.statistic > jump_cutoff(result.variance, level, cutoff_style)


def _summarize_null(
    null: NullHypothesis,
    results: List[TestResult],
    excluded: int,
    cutoff_style: CutoffStyle,
    bins: Union[int, str],
) -> NullSummary:
    evaluated = len(results)
    rejected = {lvl: sum(_decision(res, lvl, cutoff_style) for res in results) for lvl in REPORT_LEVELS}
    rates = {lvl: rejected[lvl] / evaluated if evaluated else 0.0 for lvl in REPORT_LEVELS}
    standardized = [res.standardized for res in results if res.standardized is not None]

    ks_statistic = ks_pvalue = mean_standardized = None
    if standardized:
        mean_standardized = float(np.mean(standardized))
        ks = stats.kstest(standardized, "norm")
        ks_statistic, ks_pvalue = float(ks.statistic), float(ks.pvalue)

    return NullSummary(
        null=null,
        evaluated=evaluated,
        excluded=excluded,
        rejected_10=rejected[0.10],
        rejected_5=rejected[0.05],
        rejection_rate_10=rates[0.10],
        rejection_rate_5=rates[0.05],
        mc_standard_errors={"10": mc_standard_error(rates[0.10], evaluated), "5": mc_standard_error(rates[0.05], evaluated)},
        mean_standardized=mean_standardized,
        ks_statistic=ks_statistic,
        ks_pvalue=ks_pvalue,
        standardized_histogram=build_histogram(standardized, bins),
    )


def _summarize_nulls(
    nulls: List[NullHypothesis],
    records: Sequence[Union[PathRecord, DayRecord]],
    cutoff_style: CutoffStyle,
    bins: Union[int, str],
) -> Dict[str, NullSummary]:
    summaries = {}
    for position, null in enumerate(nulls):
        results = [r.results[position] for r in records if r.error is None]
        summaries[null] = _summarize_null(null, results, len(records) - len(results), cutoff_style, bins)
    return summaries


def aggregate_records(spec: ExperimentSpec, records: List[PathRecord]) -> ExperimentReport:
    """
    Reduce per-path records to an experiment report.

    Args:
        spec: experiment that produced the records
        records: one record per path, in path-index order

    Returns:
        ExperimentReport; rates and histograms cover non-excluded paths only
    """
    evaluated = [r for r in records if r.error is None]
    statistics = [r.statistic for r in evaluated]
    summaries = _summarize_nulls(spec.nulls, records, spec.cutoff_style, spec.histogram_bins)
    primary = summaries[spec.nulls[0]]

    counted = [r for r in records if r.jump_count is not None]
    jump_free = [r for r in counted if r.jump_count == 0]
    jump_free_stats = [r.statistic for r in jump_free if r.error is None]

    return ExperimentReport(
        name=spec.name,
        n_paths=len(records),
        evaluated_paths=len(evaluated),
        excluded_paths=len(records) - len(evaluated),
        mean_statistic=float(np.mean(statistics)) if statistics else None,
        rejection_rate_10=primary.rejection_rate_10,
        rejection_rate_5=primary.rejection_rate_5,
        mc_standard_errors=primary.mc_standard_errors,
        histogram=build_histogram(statistics, spec.histogram_bins),
        nulls=summaries,
        jump_free_paths=len(jump_free) if counted else None,
        jump_free_mean_statistic=float(np.mean(jump_free_stats)) if jump_free_stats else None,
        mean_jump_count=float(np.mean([r.jump_count for r in counted])) if counted else None,
        substeps=spec.path.substeps,
        per_path=records if spec.keep_per_path else None,
    )


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """
    Simulate spec.n_paths paths, run the configured tests on each, aggregate.

    Paths whose statistics are degenerate are recorded, excluded from the
    aggregates and counted in ``excluded_paths``.
    """
    logger.info("experiment %r: %d paths, nulls=%s, workers=%d", spec.name, spec.n_paths, spec.nulls, spec.workers)
    if spec.workers == 1:
        records = [_evaluate_path(spec, i) for i in range(spec.n_paths)]
    else:
        with ThreadPoolExecutor(max_workers=spec.workers) as pool:
            records = list(pool.map(lambda i: _evaluate_path(spec, i), range(spec.n_paths)))
    report = aggregate_records(spec, records)
    logger.info(
        "experiment %r: mean S=%s, 10%%=%.3f, 5%%=%.3f, excluded=%d",
        spec.name, report.mean_statistic, report.rejection_rate_10, report.rejection_rate_5, report.excluded_paths,
    )
    return report


def run_bimodal_study(spec: ExperimentSpec) -> ExperimentReport:
    """
    Same pipeline with jump conditioning switched off, so jump-free paths stay in the sample.

    With Poisson jumps the statistic piles up near 1 (paths that jumped) and
    near k^{p/2-1} (paths that did not).
    """
    jumps = spec.path.jumps
    if isinstance(jumps, PoissonJumpParams) and jumps.condition_on_jump:
        path = spec.path.model_copy(update={"jumps": jumps.model_copy(update={"condition_on_jump": False})})
        spec = spec.model_copy(update={"path": path})
    return run_experiment(spec)


def _evaluate_day(
    source: str,
    session: SessionSpec,
    cfg: TestConfig,
    nulls: List[NullHypothesis],
    cutoff_style: CutoffStyle,
    outlier_multiple: float,
) -> DayRecord:
    record = DayRecord(source=str(source), sample_seconds=session.sample_seconds)
    try:
        series, summary = ingest_file(source, session, cfg.units, outlier_multiple)
        record.ingest = summary
        results = run_tests(series, cfg, nulls, cutoff_style)
    except JumpTestError as e:
        logger.warning("%s at %ds excluded: %s", source, session.sample_seconds, e)
        record.error = f"{type(e).__name__}: {e}"
        return record
    record.results = results
    record.statistic = results[0].statistic
    return record


def run_batch(
    sources: Sequence[Union[str, Path]],
    sample_seconds: Sequence[int],
    cfg: TestConfig = TestConfig(),
    nulls: Sequence[NullHypothesis] = ("no_jumps",),
    cutoff_style: CutoffStyle = "gaussian",
    session: SessionSpec = SessionSpec(),
    outlier_multiple: float = 10.0,
    histogram_bins: Union[int, str] = "fd",
    workers: int = 1,
    keep_per_file: bool = False,
    name: str = "",
) -> BatchReport:
    """
    Test every tick file at every sampling interval and histogram S-hat across files.

    Files that fail ingestion or give degenerate statistics are recorded and
    excluded from that frequency's aggregates.

    Args:
        sources: local tick CSVs, one trading day each
        sample_seconds: sampling intervals to test each file at
        cfg: test configuration shared by all runs
        nulls: null hypotheses to test; the first one drives the headline rates
        cutoff_style: cut-off for the jump null
        session: session hours and timezone; its sample_seconds is replaced per run
        outlier_multiple: bounce-back outlier threshold for cleaning
        histogram_bins: bin count or "fd"
        workers: threads
        keep_per_file: keep every DayRecord in the report

    Returns:
        BatchReport with one FrequencySummary per sampling interval
    """
    nulls = list(nulls)
    intervals = list(dict.fromkeys(int(s) for s in sample_seconds))
    if not sources or not intervals:
        raise ConfigError("a batch needs at least one file and one sampling interval")
    if not nulls or len(set(nulls)) != len(nulls):
        raise ConfigError("nulls must be a non-empty list without repeats")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    sessions = {s: validated(SessionSpec, {**session.model_dump(), "sample_seconds": s}) for s in intervals}
    jobs = [(source, s) for s in intervals for source in sources]
    logger.info("batch %r: %d files x %d intervals, workers=%d", name, len(sources), len(intervals), workers)

    def evaluate(job):
        source, s = job
        return _evaluate_day(source, sessions[s], cfg, nulls, cutoff_style, outlier_multiple)

    if workers == 1:
        records = [evaluate(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(evaluate, jobs))

    frequencies = {}
    for s in intervals:
        day_records = [r for r in records if r.sample_seconds == s]
        statistics = [r.statistic for r in day_records if r.error is None]
        frequencies[str(s)] = FrequencySummary(
            sample_seconds=s,
            evaluated=len(statistics),
            excluded=len(day_records) - len(statistics),
            mean_statistic=float(np.mean(statistics)) if statistics else None,
            histogram=build_histogram(statistics, histogram_bins),
            nulls=_summarize_nulls(nulls, day_records, cutoff_style, histogram_bins),
        )
        logger.info("batch %r at %ds: mean S=%s over %d files", name, s, frequencies[str(s)].mean_statistic, len(statistics))

    return BatchReport(
        name=name,
        n_files=len(sources),
        sample_seconds=intervals,
        frequencies=frequencies,
        per_file=records if keep_per_file else None,
    )


def validate_report(report: Dict[str, Any]) -> bool:
    """
    Check a dumped report against the published schema.

    Args:
        report: ExperimentReport.model_dump() output

    Returns:
        True if valid, False otherwise
    """
    if not isinstance(report, dict):
        return False
    required = ["schema_version", "n_paths", "evaluated_paths", "excluded_paths", "rejection_rate_10",
                "rejection_rate_5", "mc_standard_errors", "histogram", "nulls"]
    if not all(key in report for key in required):
        return False
    if report["evaluated_paths"] + report["excluded_paths"] != report["n_paths"]:
        return False
    for rate_key in ("rejection_rate_10", "rejection_rate_5"):
        if not 0.0 <= report[rate_key] <= 1.0:
            return False
    histogram = report["histogram"]
    if histogram["counts"] and len(histogram["edges"]) != len(histogram["counts"]) + 1:
        return False
    for summary in report["nulls"].values():
        if summary["evaluated"] + summary["excluded"] != report["n_paths"]:
            return False
    return True


def format_report(report: Union[ExperimentReport, BatchReport], include_per_path: bool = False) -> str:
    """Sorted JSON; per-path or per-file records only on request."""
    exclude = None if include_per_path else {"per_path", "per_file"} & set(type(report).model_fields)
    return json.dumps(report.model_dump(mode="json", by_alias=True, exclude=exclude), indent=2, sort_keys=True)


def _histogram_frame(histogram: Histogram) -> pd.DataFrame:
    return pd.DataFrame({
        "bin_left": histogram.edges[:-1],
        "bin_right": histogram.edges[1:],
        "count": histogram.counts,
        "density": histogram.densities,
    }, columns=["bin_left", "bin_right", "count", "density"])


def _write_histograms(target: Path, histogram: Histogram, nulls: Dict[str, NullSummary]) -> List[Path]:
    _histogram_frame(histogram).to_csv(target, index=False)
    written = [target]
    for null, summary in nulls.items():
        std_path = target.with_name(f"{target.stem}.{null}.standardized.csv")
        _histogram_frame(summary.standardized_histogram).to_csv(std_path, index=False)
        written.append(std_path)
    return written


def emit_histogram(report: Union[ExperimentReport, BatchReport], target: Union[str, Path]) -> List[Path]:
    """
    Write the histogram data behind the figures.

    For an experiment, writes ``target`` (raw statistic) and
    ``<stem>.<null>.standardized.csv`` per null. For a batch, writes the same
    pair per sampling interval under ``<stem>.<seconds>s<suffix>``. Either way
    a ``<stem>.json`` sidecar carries the summary statistics.

    Args:
        report: populated experiment or batch report
        target: CSV path for the raw-statistic histogram

    Returns:
        Paths written
    """
    target = Path(target)
    written = []
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(report, BatchReport):
            for key, summary in report.frequencies.items():
                per_interval = target.with_name(f"{target.stem}.{key}s{target.suffix}")
                written += _write_histograms(per_interval, summary.histogram, summary.nulls)
        else:
            written += _write_histograms(target, report.histogram, report.nulls)
        sidecar = target.with_suffix(".json")
        sidecar.write_text(format_report(report))
        written.append(sidecar)
    except OSError as e:
        raise OSError(f"cannot write histogram output under {target}: {e}") from e
    return written


def experiment_spec_from_mapping(data: Dict[str, Any]) -> ExperimentSpec:
    """
    Build an ExperimentSpec from a declarative mapping (a parsed TOML file).

    The ``path`` table takes ``sample_seconds`` and ``horizon_days`` instead of
    raw deltas, and an optional ``budget`` table {total_variance, jump_share}
    that sets beta and the Poisson jump scale.
    """
    data = copy.deepcopy(data)
    units = validated(TimeUnits, data.pop("units", {}))
    path = data.pop("path", None)
    if path is None:
        raise ConfigError("experiment needs a [path] table")

    sample_seconds = path.pop("sample_seconds", None)
    horizon_days = path.pop("horizon_days", 1.0)
    if sample_seconds is not None:
        path["delta"] = units.seconds_to_unit(sample_seconds)
        path["horizon_t"] = units.days_to_unit(horizon_days)

    budget = path.pop("budget", None)
    if budget is not None:
        jumps = path.get("jumps") or {}
        if jumps.get("kind", "poisson") != "poisson" or "lambda" not in jumps:
            raise ConfigError("a variance budget needs Poisson jumps with a lambda")
        beta, jump_scale = calibrate_poisson_budget(
            budget["total_variance"], budget["jump_share"], jumps["lambda"], units,
        )
        path.setdefault("sv", {})["beta"] = beta
        jumps["jump_scale"] = jump_scale

    path["units"] = units.model_dump()
    test = data.pop("test", {})
    test["units"] = units.model_dump()
    return validated(ExperimentSpec, {**data, "path": path, "test": test})


def load_experiment_spec(source: Union[str, Path]) -> ExperimentSpec:
    """Read an experiment TOML file."""
    try:
        with open(source, "rb") as f:
            data = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read experiment file {source}: {e}") from e
    return experiment_spec_from_mapping(data)
