import copy
import json
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from config import TestConfig
from errors import ConfigError
from harness import (
    ExperimentSpec,
    PathRecord,
    aggregate_records,
    build_histogram,
    emit_histogram,
    experiment_spec_from_mapping,
    format_report,
    load_experiment_spec,
    mc_standard_error,
    run_batch,
    run_bimodal_study,
    run_experiment,
    validate_report,
)
from simulate import PoissonJumpParams, VolJumpParams

EXPERIMENTS = Path(__file__).parent / "experiments"


@pytest.fixture
def small_experiment(coarse_spec):
    return ExperimentSpec(
        name="small",
        path=coarse_spec,
        n_paths=12,
        nulls=["no_jumps", "jumps"],
        histogram_bins=5,
        keep_per_path=True,
    )


def test_mc_standard_error():
    assert mc_standard_error(0.05, 1000) == pytest.approx(math.sqrt(0.05 * 0.95 / 1000))
    assert mc_standard_error(0.0, 0) == 0.0


def test_histogram_densities_integrate_to_one(rng):
    histogram = build_histogram(rng.standard_normal(500))
    assert sum(histogram.counts) == 500
    assert len(histogram.edges) == len(histogram.counts) + 1
    widths = np.diff(histogram.edges)
    assert float(np.dot(histogram.densities, widths)) == pytest.approx(1.0)


def test_histogram_of_nothing_is_empty():
    histogram = build_histogram([])
    assert histogram.edges == [] and histogram.counts == []


def test_heavy_tails_cap_bin_count(rng):
    histogram = build_histogram(rng.standard_cauchy(2000))
    assert len(histogram.counts) <= 500


def test_spec_validation(coarse_spec):
    with pytest.raises(ValueError):
        ExperimentSpec(path=coarse_spec, histogram_bins=1)
    with pytest.raises(ValueError):
        ExperimentSpec(path=coarse_spec, nulls=["jumps", "jumps"])
    with pytest.raises(ValueError):
        ExperimentSpec(path=coarse_spec, n_paths=0)


def test_run_experiment_conservation(small_experiment):
    report = run_experiment(small_experiment)
    assert report.n_paths == 12
    assert report.evaluated_paths + report.excluded_paths == 12
    assert sum(report.histogram.counts) == report.evaluated_paths
    for summary in report.nulls.values():
        assert 0 <= summary.rejected_5 <= summary.rejected_10 <= summary.evaluated
        assert summary.rejection_rate_5 == summary.rejected_5 / summary.evaluated
    assert report.rejection_rate_5 == report.nulls["no_jumps"].rejection_rate_5
    assert report.jump_free_paths == 12
    assert len(report.per_path) == 12
    assert report.mean_statistic == pytest.approx(np.mean([r.statistic for r in report.per_path]))
    assert validate_report(report.model_dump())


def test_report_independent_of_worker_count(small_experiment):
    serial = run_experiment(small_experiment)
    threaded = run_experiment(small_experiment.model_copy(update={"workers": 4}))
    assert serial.model_dump() == threaded.model_dump()


def test_single_path_report_is_that_path(coarse_spec):
    spec = ExperimentSpec(path=coarse_spec, n_paths=1, keep_per_path=True)
    report = run_experiment(spec)
    only = report.per_path[0].results[0]
    assert report.mean_statistic == only.statistic
    assert report.rejection_rate_5 == float(only.reject)


def test_degenerate_paths_are_excluded_and_counted(coarse_spec):
    spec = ExperimentSpec(path=coarse_spec, n_paths=2)
    records = [
        PathRecord(index=0, jump_count=0, attempts=1, error="DegeneratePathError: constant path"),
        PathRecord(index=1, jump_count=0, attempts=1, error="DegeneratePathError: constant path"),
    ]
    report = aggregate_records(spec, records)
    assert report.excluded_paths == 2
    assert report.evaluated_paths == 0
    assert report.mean_statistic is None
    assert report.histogram.counts == []
    assert validate_report(report.model_dump())


def test_emit_histogram(small_experiment, tmp_path):
    report = run_experiment(small_experiment)
    written = emit_histogram(report, tmp_path / "out" / "hist.csv")
    names = sorted(p.name for p in written)
    assert names == ["hist.csv", "hist.json", "hist.jumps.standardized.csv", "hist.no_jumps.standardized.csv"]
    frame = pd.read_csv(tmp_path / "out" / "hist.csv")
    assert list(frame.columns) == ["bin_left", "bin_right", "count", "density"]
    assert frame["count"].sum() == report.evaluated_paths
    assert (frame["density"] * (frame["bin_right"] - frame["bin_left"])).sum() == pytest.approx(1.0)
    sidecar = json.loads((tmp_path / "out" / "hist.json").read_text())
    assert sidecar["schema_version"] == "1"
    assert "per_path" not in sidecar


def test_emit_histogram_empty_report_writes_header_only(coarse_spec, tmp_path):
    spec = ExperimentSpec(path=coarse_spec, n_paths=1)
    report = aggregate_records(spec, [PathRecord(index=0, jump_count=0, attempts=1, error="x")])
    emit_histogram(report, tmp_path / "empty.csv")
    assert (tmp_path / "empty.csv").read_text().strip() == "bin_left,bin_right,count,density"


def test_emit_histogram_reports_path_on_failure(small_experiment, tmp_path):
    report = aggregate_records(small_experiment, [])
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(OSError, match="blocker"):
        emit_histogram(report, blocker / "hist.csv")


def test_validate_report_catches_inconsistency(small_experiment):
    dumped = run_experiment(small_experiment).model_dump()
    assert validate_report(dumped)
    assert not validate_report({**dumped, "excluded_paths": 3})
    assert not validate_report({**dumped, "rejection_rate_5": 1.5})
    assert not validate_report({"n_paths": 1})
    assert not validate_report([])


def test_format_report_sorted_json(small_experiment):
    report = run_experiment(small_experiment)
    text = format_report(report)
    assert json.loads(text)["n_paths"] == 12
    assert "per_path" not in json.loads(text)
    assert "per_path" in json.loads(format_report(report, include_per_path=True))


def test_bimodal_study_keeps_jump_free_paths(continuous_sv):
    from simulate import PathSpec

    spec = ExperimentSpec(
        path=PathSpec.from_grid(
            60, seed=21, substeps=1, sv=continuous_sv,
            jumps=PoissonJumpParams(lam=1.0, jump_scale=0.02, condition_on_jump=True),
        ),
        n_paths=40,
        nulls=["jumps"],
    )
    report = run_bimodal_study(spec)
    assert 0 < report.jump_free_paths < 40
    assert report.jump_free_mean_statistic > 1.5
    assert report.mean_jump_count is not None


BATCH_FILES = 4


@pytest.fixture
def day_files(write_ticks, session_open_epoch):
    files = []
    for seed in range(BATCH_FILES):
        rng = np.random.default_rng(seed)
        times = session_open_epoch + np.arange(23401)
        prices = 100 * np.exp(np.cumsum(rng.normal(0, 1e-4, 23401)))
        files.append(write_ticks(times, prices, f"day{seed}.csv"))
    return files


def test_batch_conservation(day_files):
    report = run_batch(day_files, [5, 30, 5], nulls=["no_jumps", "jumps"], histogram_bins=3, keep_per_file=True)
    assert report.sample_seconds == [5, 30]
    assert list(report.frequencies) == ["5", "30"]
    assert len(report.per_file) == 2 * BATCH_FILES
    for key, summary in report.frequencies.items():
        records = [r for r in report.per_file if str(r.sample_seconds) == key]
        assert summary.evaluated == BATCH_FILES
        assert summary.mean_statistic == pytest.approx(np.mean([r.statistic for r in records]))
        assert sum(summary.histogram.counts) == BATCH_FILES
        assert set(summary.nulls) == {"no_jumps", "jumps"}
    assert [r.results[0].n_increments for r in report.per_file] == [4680] * BATCH_FILES + [780] * BATCH_FILES


def test_batch_independent_of_worker_count(day_files):
    serial = run_batch(day_files, [5, 60], keep_per_file=True)
    threaded = run_batch(day_files, [5, 60], keep_per_file=True, workers=3)
    assert format_report(serial, include_per_path=True) == format_report(threaded, include_per_path=True)


def test_batch_excludes_unusable_days(day_files, tmp_path, write_ticks, session_open_epoch):
    empty = tmp_path / "empty.csv"
    empty.write_text("timestamp,price\n")
    flat = write_ticks(session_open_epoch + np.arange(23401), np.full(23401, 100.0), "flat.csv")
    report = run_batch([day_files[0], empty, flat], [5], keep_per_file=True)
    summary = report.frequencies["5"]
    assert summary.evaluated == 1
    assert summary.excluded == 2
    errors = [r.error for r in report.per_file]
    assert errors[0] is None
    assert errors[1].startswith("EmptySessionError")
    assert errors[2].startswith("DegeneratePathError")


@pytest.mark.parametrize("kwargs", [
    {"sources": [], "sample_seconds": [5]},
    {"sample_seconds": []},
    {"sample_seconds": [0]},
    {"sample_seconds": [5], "nulls": []},
    {"sample_seconds": [5], "workers": 0},
])
def test_batch_rejects_bad_arguments(day_files, kwargs):
    kwargs.setdefault("sources", day_files)
    with pytest.raises(ConfigError):
        run_batch(**kwargs)


def test_emit_batch_histograms(day_files, tmp_path):
    report = run_batch(day_files, [5, 60], nulls=["no_jumps"], histogram_bins=3)
    written = emit_histogram(report, tmp_path / "batch.csv")
    assert sorted(p.name for p in written) == [
        "batch.5s.csv", "batch.5s.no_jumps.standardized.csv",
        "batch.60s.csv", "batch.60s.no_jumps.standardized.csv", "batch.json",
    ]
    raw = pd.read_csv(tmp_path / "batch.60s.csv")
    assert raw["count"].sum() == BATCH_FILES
    assert json.loads((tmp_path / "batch.json").read_text())["frequencies"]["60"]["evaluated"] == BATCH_FILES


@pytest.mark.parametrize("name", sorted(p.name for p in EXPERIMENTS.glob("*.toml")))
def test_experiment_files_load(name):
    spec = load_experiment_spec(EXPERIMENTS / name)
    assert spec.n_paths >= 1
    assert spec.path.n_intervals in (4680, 23400)


def test_budget_table_sets_beta_and_jump_scale():
    spec = load_experiment_spec(EXPERIMENTS / "poisson_1sec.toml")
    assert spec.path.sv.beta == pytest.approx(0.04)
    assert spec.path.jumps.jump_scale == pytest.approx(math.sqrt(3 * 0.75 * 0.16 / (7 * 252)))
    assert spec.path.jumps.condition_on_jump
    assert spec.nulls == ["jumps", "no_jumps"]


def test_mapping_is_left_untouched():
    with open(EXPERIMENTS / "poisson_1sec.toml", "rb") as f:
        data = tomllib.load(f)
    before = copy.deepcopy(data)
    first = experiment_spec_from_mapping(data)
    assert data == before
    assert experiment_spec_from_mapping(data) == first


def test_continuous_file_carries_truncation():
    spec = load_experiment_spec(EXPERIMENTS / "continuous_5sec_k2.toml")
    assert spec.test.truncation.alpha == pytest.approx(2.0)
    assert spec.test.truncation.varpi == pytest.approx(0.47)


@pytest.mark.parametrize("body", [
    "n_paths = 3\n",
    "n_paths = 3\n[path]\nsample_seconds = 5\n[path.sv]\nbeta = -1\ngamma = 0.5\nkappa = 5\nrho = 0\n",
    "n_paths = 3\nunknown = 1\n[path]\nsample_seconds = 5\n[path.sv]\nbeta = 0.1\ngamma = 0.5\nkappa = 5\nrho = 0\n",
    "n_paths = [\n",
])
def test_bad_experiment_files(tmp_path, body):
    target = tmp_path / "bad.toml"
    target.write_text(body)
    with pytest.raises(ConfigError):
        load_experiment_spec(target)


def test_missing_experiment_file(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_spec(tmp_path / "nope.toml")


def _acceptance(name, n_paths=1000, **update):
    spec = load_experiment_spec(EXPERIMENTS / name)
    return spec.model_copy(update={"n_paths": n_paths, **update})


@pytest.mark.slow
def test_no_jump_test_level():
    report = run_experiment(_acceptance("continuous_5sec_k2.toml", nulls=["no_jumps"]))
    assert 1.98 <= report.mean_statistic <= 2.02
    assert abs(report.rejection_rate_5 - 0.044) <= 3 * mc_standard_error(0.044, 1000)
    assert report.nulls["no_jumps"].ks_pvalue > 0.01


@pytest.mark.slow
def test_jump_test_level_poisson():
    report = run_experiment(_acceptance("poisson_1sec.toml", nulls=["jumps"]))
    assert 0.99 <= report.mean_statistic <= 1.01
    assert abs(report.rejection_rate_5 - 0.056) <= 3 * mc_standard_error(0.056, 1000)
    assert report.nulls["jumps"].ks_pvalue > 0.01


@pytest.mark.slow
def test_jump_test_level_cauchy():
    report = run_experiment(_acceptance("cauchy50_5sec.toml"))
    assert 0.99 <= report.mean_statistic <= 1.02
    assert abs(report.rejection_rate_5 - 0.059) <= 3 * mc_standard_error(0.059, 1000)
    assert abs(report.nulls["jumps"].mean_standardized) < 0.2


@pytest.mark.slow
def test_cauchy_standardized_statistic_is_normal():
    report = run_experiment(_acceptance("cauchy50_1sec.toml"))
    assert 0.99 <= report.mean_statistic <= 1.01
    assert abs(report.rejection_rate_5 - 0.051) <= 3 * mc_standard_error(0.051, 1000)
    assert report.nulls["jumps"].ks_pvalue > 0.01


@pytest.mark.slow
def test_power_of_both_tests():
    jumps = run_experiment(_acceptance("poisson_1sec.toml", n_paths=200, nulls=["no_jumps"]))
    assert jumps.rejection_rate_5 >= 0.9
    spec = _acceptance("poisson_1sec.toml", n_paths=200, nulls=["jumps"])
    continuous = run_experiment(spec.model_copy(update={"path": spec.path.model_copy(update={"jumps": None})}))
    assert continuous.rejection_rate_5 >= 0.9


@pytest.mark.slow
def test_consistency_at_one_second():
    spec = _acceptance("poisson_1sec.toml", n_paths=200, nulls=["jumps"], keep_per_path=True)
    jumpy = run_experiment(spec)
    assert np.mean([abs(r.statistic - 1) < 0.15 for r in jumpy.per_path]) >= 0.95
    continuous_path = spec.path.model_copy(update={
        "jumps": None,
        "sv": spec.path.sv.model_copy(update={"beta": 0.16}),
    })
    continuous = run_experiment(spec.model_copy(update={"path": continuous_path}))
    assert np.mean([abs(r.statistic - 2) < 0.15 for r in continuous.per_path]) >= 0.95


@pytest.mark.slow
@pytest.mark.parametrize("k, low, high", [(2, 0.45, 0.60), (3, 0.30, 0.42)])
def test_noise_pulls_statistic_towards_one_over_k(k, low, high):
    spec = _acceptance("noise_1sec_k2.toml", n_paths=200)
    report = run_experiment(spec.model_copy(update={"test": TestConfig(k=k)}))
    assert low <= report.mean_statistic <= high


@pytest.mark.slow
def test_bimodal_zero_jump_fraction():
    report = run_bimodal_study(_acceptance("bimodal_poisson.toml"))
    assert abs(report.jump_free_paths / report.n_paths - math.exp(-1)) < 4 * math.sqrt(0.368 * 0.632 / 1000)
    assert report.jump_free_mean_statistic == pytest.approx(2.0, abs=0.05)


@pytest.mark.slow
@pytest.mark.parametrize("name, null", [("continuous_5sec_k2.toml", "no_jumps"), ("poisson_1sec.toml", "jumps")])
def test_volatility_jumps_leave_the_level_alone(name, null):
    spec = _acceptance(name, n_paths=500, nulls=[null])
    calm = run_experiment(spec)
    spiky = run_experiment(spec.model_copy(update={
        "path": spec.path.model_copy(update={"vol_jumps": VolJumpParams(intensity=5.0)}),
    }))
    assert abs(spiky.mean_statistic - calm.mean_statistic) < 0.02
    for calm_rate, spiky_rate in ((calm.rejection_rate_5, spiky.rejection_rate_5),
                                  (calm.rejection_rate_10, spiky.rejection_rate_10)):
        assert abs(spiky_rate - calm_rate) < 2 * mc_standard_error(max(calm_rate, 0.01), 500)
