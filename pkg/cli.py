"""
Command-line entry point.

    python cli.py test --input day.csv --sample-seconds 5 --null no_jumps
    python cli.py simulate --spec experiments/poisson_1sec.toml --output day.csv --format ticks
    python cli.py experiment --spec experiments/continuous_5sec_k2.toml --workers 4
    python cli.py batch --input days/*.csv --sample-seconds 1 5 60 --histogram out/days.csv
    python cli.py moments --p 4 --k 2

Results are JSON on stdout with sorted keys; logs go to stderr.
"""

import argparse
import json
import logging
import os
import sys
import tempfile
from datetime import time
from typing import Any, Dict, List, Optional

from config import SCHEMA_VERSION, TestConfig, configure_logging, validated
from errors import ConfigError, JumpTestError
from harness import emit_histogram, format_report, load_experiment_spec, run_batch, run_bimodal_study, run_experiment
from ingest import DEFAULT_TIMEZONE, SessionSpec, ingest_file, resolve_source, ticks_from_path
from jumptest import run_tests
from moments import moments_table
from simulate import simulate_path

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

NULL_CHOICES = {"no_jumps": ["no_jumps"], "jumps": ["jumps"], "both": ["no_jumps", "jumps"]}


def _time_of_day(value: str) -> time:
    try:
        return time.fromisoformat(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HH:MM[:SS], got {value!r}")


def _window(value: str):
    return value if value == "auto" else int(value)


def _dump(payload: Dict[str, Any]) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **payload}, indent=2, sort_keys=True)


def _write_text(text: str, target: Optional[str]) -> None:
    if target:
        with open(target, "w") as f:
            f.write(text)
    else:
        print(text)


def _add_test_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group(
        "test configuration",
        "unset flags take the defaults shown, or the experiment's [test] table and nulls with --spec",
    )
    group.add_argument("--p", type=float, help="power of the variations (default 4)")
    group.add_argument("--k", type=int, help="coarse/fine scale ratio (default 2)")
    group.add_argument("--level", type=float, help="test level (default 0.05)")
    group.add_argument("--null", choices=sorted(NULL_CHOICES), help="null hypothesis to test (default both)")
    group.add_argument("--cutoff-style", choices=["gaussian", "chebyshev"], help="cut-off for the jump null (default gaussian)")
    group.add_argument("--variance-estimator", choices=["truncated", "multipower"],
                       help="estimator of the continuous-null variance (default truncated)")
    group.add_argument("--window-kn", type=_window, help="D-hat window half-width, or 'auto' (default auto)")
    group.add_argument("--alpha", type=float, help="truncation multiplier alpha (with --varpi)")
    group.add_argument("--varpi", type=float, help="truncation exponent (default 0.47)")
    group.add_argument("--sigma-guess", type=float, help="volatility guess; truncation is 5 sigma delta^varpi")
    group.add_argument("--time-unit", choices=["years", "days"], help="unit of delta (default years)")


def _add_session_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--open", type=_time_of_day, default=time(9, 30), help="session open (default 09:30)")
    parser.add_argument("--close", type=_time_of_day, default=time(16, 0), help="session close (default 16:00)")
    parser.add_argument("--timezone", default=DEFAULT_TIMEZONE,
                        help=f"session timezone; also the zone of ISO timestamps without an offset (default {DEFAULT_TIMEZONE})")
    parser.add_argument("--outlier-multiple", type=float, default=10.0, help="bounce-back outlier threshold (default 10)")


def _test_config(args: argparse.Namespace, base: TestConfig = TestConfig()) -> TestConfig:
    """Flags that were given override ``base``."""
    data = base.model_dump()
    for flag in ("p", "k", "level", "varpi", "window_kn", "variance_estimator", "sigma_guess"):
        value = getattr(args, flag)
        if value is not None:
            data[flag] = value
    if args.time_unit is not None:
        data["units"] = {**data["units"], "unit": args.time_unit}
    if args.alpha is not None:
        data["truncation"] = {"alpha": args.alpha, "varpi": data["varpi"]}
    elif args.varpi is not None and data["truncation"] is not None:
        data["truncation"] = {**data["truncation"], "varpi": args.varpi}
    return validated(TestConfig, data)


def _session(args: argparse.Namespace, sample_seconds: int = 5) -> SessionSpec:
    return validated(SessionSpec, {
        "open": args.open,
        "close": args.close,
        "timezone": args.timezone,
        "sample_seconds": sample_seconds,
    })


def cmd_test(args: argparse.Namespace) -> int:
    ingest_info = None
    if args.input:
        cfg = _test_config(args)
        nulls = NULL_CHOICES[args.null or "both"]
        cutoff_style = args.cutoff_style or "gaussian"
        with tempfile.TemporaryDirectory() as temp_dir:
            source = resolve_source(args.input, temp_dir)
            series, summary = ingest_file(source, _session(args, args.sample_seconds), cfg.units, args.outlier_multiple)
        ingest_info = summary.model_dump()
    else:
        spec = load_experiment_spec(args.spec)
        if args.time_unit is not None and args.time_unit != spec.path.units.unit:
            raise ConfigError(f"--time-unit {args.time_unit} conflicts with the experiment's unit {spec.path.units.unit}")
        cfg = _test_config(args, spec.test)
        nulls = NULL_CHOICES[args.null] if args.null else spec.nulls
        cutoff_style = args.cutoff_style or spec.cutoff_style
        path_spec = spec.path if args.seed is None else spec.path.model_copy(update={"seed": args.seed})
        series = simulate_path(path_spec, args.path_index).series

    results = run_tests(series, cfg, nulls, cutoff_style)
    payload = {"results": [r.to_json_dict() for r in results]}
    if ingest_info is not None:
        payload["ingest"] = ingest_info
    print(_dump(payload))
    return EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    cfg = _test_config(args)
    with tempfile.TemporaryDirectory() as temp_dir:
        sources = [resolve_source(s, os.path.join(temp_dir, str(i))) for i, s in enumerate(args.input)]
        report = run_batch(
            sources,
            args.sample_seconds,
            cfg,
            NULL_CHOICES[args.null or "both"],
            args.cutoff_style or "gaussian",
            _session(args),
            args.outlier_multiple,
            workers=args.workers,
            keep_per_file=args.per_file,
        )
    if args.histogram:
        for written in emit_histogram(report, args.histogram):
            logger.info("wrote %s", written)
    _write_text(format_report(report, include_per_path=args.per_file), args.output)
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = load_experiment_spec(args.spec)
    path_spec = spec.path if args.seed is None else spec.path.model_copy(update={"seed": args.seed})
    path = simulate_path(path_spec, args.path_index)
    if args.format == "ticks":
        frame = ticks_from_path(path.times, path.prices, SessionSpec(), path_spec.units)
    else:
        frame = path.to_frame()
    target = args.output or sys.stdout
    frame.to_csv(target, index=False)
    logger.info("simulated path %d: %d increments, jumps=%s", args.path_index, len(path.series), path.jump_count)
    return EXIT_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    spec = load_experiment_spec(args.spec)
    update: Dict[str, Any] = {}
    for flag, field, floor in ((args.workers, "workers", 1), (args.n_paths, "n_paths", 1), (args.seed, "seed", 0)):
        if flag is not None and flag < floor:
            raise ConfigError(f"--{field.replace('_', '-')} must be >= {floor}, got {flag}")
    if args.workers is not None:
        update["workers"] = args.workers
    if args.n_paths is not None:
        update["n_paths"] = args.n_paths
    if args.per_path:
        update["keep_per_path"] = True
    if args.seed is not None:
        update["path"] = spec.path.model_copy(update={"seed": args.seed})
    spec = spec.model_copy(update=update)

    report = run_bimodal_study(spec) if args.bimodal else run_experiment(spec)
    if args.histogram:
        for written in emit_histogram(report, args.histogram):
            logger.info("wrote %s", written)
    _write_text(format_report(report, include_per_path=args.per_path), args.output)
    return EXIT_OK


def cmd_moments(args: argparse.Namespace) -> int:
    print(_dump({"p": args.p, "k": args.k, "moments": moments_table(args.p, args.k)}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jumptest", description="Two-scale power-variation test for jumps in high-frequency prices.")
    parser.add_argument("--log-level", default="WARNING", help="logging level for stderr (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="run the jump test on a tick file or a simulated path")
    source = test.add_mutually_exclusive_group(required=True)
    source.add_argument("--input", help="tick CSV (timestamp,price), local path or http(s) URL")
    source.add_argument("--spec", help="experiment TOML whose [path] table is simulated instead")
    test.add_argument("--sample-seconds", type=int, default=5, help="calendar sampling interval (default 5)")
    _add_session_flags(test)
    test.add_argument("--seed", type=int, help="root seed override for --spec")
    test.add_argument("--path-index", type=int, default=0, help="path index under the root seed (default 0)")
    _add_test_config_flags(test)
    test.set_defaults(func=cmd_test)

    batch = sub.add_parser("batch", help="run the jump test on many tick files at several sampling intervals")
    batch.add_argument("--input", nargs="+", required=True, help="tick CSVs, one trading day each (local paths or http(s) URLs)")
    batch.add_argument("--sample-seconds", type=int, nargs="+", default=[5], help="sampling intervals to test each file at (default 5)")
    _add_session_flags(batch)
    batch.add_argument("--workers", type=int, default=1, help="thread count (default 1)")
    batch.add_argument("--per-file", action="store_true", help="include per-file results in the report")
    batch.add_argument("--histogram", help="CSV path stem for the per-interval S histograms (plus a JSON sidecar)")
    batch.add_argument("--output", help="report JSON path (default stdout)")
    _add_test_config_flags(batch)
    batch.set_defaults(func=cmd_batch)

    simulate = sub.add_parser("simulate", help="simulate one path from an experiment file and write it as CSV")
    simulate.add_argument("--spec", required=True, help="experiment TOML with a [path] table")
    simulate.add_argument("--seed", type=int, help="root seed override")
    simulate.add_argument("--path-index", type=int, default=0, help="path index under the root seed (default 0)")
    simulate.add_argument("--format", choices=["path", "ticks"], default="path",
                          help="'path': time,price,jump_flag; 'ticks': timestamp,price for the test command")
    simulate.add_argument("--output", help="CSV path (default stdout)")
    simulate.set_defaults(func=cmd_simulate)

    experiment = sub.add_parser("experiment", help="run a Monte Carlo experiment file")
    experiment.add_argument("--spec", required=True, help="experiment TOML")
    experiment.add_argument("--workers", type=int, help="thread count override")
    experiment.add_argument("--n-paths", type=int, help="path count override")
    experiment.add_argument("--seed", type=int, help="root seed override")
    experiment.add_argument("--bimodal", action="store_true", help="keep jump-free paths (no conditioning on a jump)")
    experiment.add_argument("--per-path", action="store_true", help="include per-path results in the report")
    experiment.add_argument("--histogram", help="CSV path for histogram output (plus standardized CSVs and a JSON sidecar)")
    experiment.add_argument("--output", help="report JSON path (default stdout)")
    experiment.set_defaults(func=cmd_experiment)

    moments = sub.add_parser("moments", help="print the Gaussian moment constants for (p, k)")
    moments.add_argument("--p", type=float, default=4.0, help="power (default 4)")
    moments.add_argument("--k", type=int, default=2, help="scale ratio (default 2)")
    moments.set_defaults(func=cmd_moments)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"{parser.prog}: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (JumpTestError, OSError) as e:
        print(f"{parser.prog}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
