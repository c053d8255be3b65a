import os
import tempfile

from config import TestConfig, TimeUnits
from ingest import SessionSpec, ingest_file, ticks_from_path
from jumptest import consistent_decision, run_tests
from simulate import PathSpec, PoissonJumpParams, SVParams, calibrate_poisson_budget, simulate_path

TOTAL_VARIANCE = 0.16
JUMP_SHARE = 0.75
JUMPS_PER_DAY = 1.0


def simulated_days(units: TimeUnits, sample_seconds: int = 5, seed: int = 7) -> dict:
    """
    One continuous day and one day with compound Poisson jumps, same total variance.

    Returns:
        Dictionary of name -> SimulatedPath
    """
    continuous = PathSpec.from_grid(
        sample_seconds, units=units, seed=seed,
        sv=SVParams(beta=TOTAL_VARIANCE, gamma=0.5, kappa=5.0, rho=-0.5),
    )
    beta, jump_scale = calibrate_poisson_budget(TOTAL_VARIANCE, JUMP_SHARE, JUMPS_PER_DAY, units)
    jumpy = PathSpec.from_grid(
        sample_seconds, units=units, seed=seed,
        sv=SVParams(beta=beta, gamma=0.5, kappa=5.0, rho=-0.5),
        jumps=PoissonJumpParams(lam=JUMPS_PER_DAY, jump_scale=jump_scale, condition_on_jump=True),
    )
    return {"continuous": simulate_path(continuous), "jumps": simulate_path(jumpy)}


def end_to_end_pipeline(output_dir: str, sample_seconds: int = 5) -> dict:
    """
    Simulated day -> tick CSV -> ingest -> both tests.

    Args:
        output_dir: Directory for the tick CSVs
        sample_seconds: calendar sampling interval

    Returns:
        Dictionary of name -> (ingest summary, test results)
    """
    units = TimeUnits()
    session = SessionSpec(sample_seconds=sample_seconds)
    cfg = TestConfig(units=units)

    print("Step 1: Simulating a continuous day and a day with jumps...")
    paths = simulated_days(units, sample_seconds)
    for name, path in paths.items():
        print(f"  {name}: {len(path.series)} increments, jumps={path.jump_count}")

    print("\nStep 2: Writing tick files...")
    files = {}
    for name, path in paths.items():
        target = os.path.join(output_dir, f"{name}.csv")
        ticks_from_path(path.times, path.prices, session, units).to_csv(target, index=False)
        files[name] = target
        print(f"  {target}")

    print("\nStep 3: Ingesting and testing...")
    outcome = {}
    for name, target in files.items():
        series, summary = ingest_file(target, session, units)
        results = run_tests(series, cfg, ("no_jumps", "jumps"))
        outcome[name] = (summary, results)
        print(f"  {name}: {summary.n_ticks} ticks, {summary.dropped} dropped, {len(series)} increments")
    return outcome


def main():
    print("=" * 70)
    print("Two-scale jump test - End-to-End Demo")
    print("=" * 70)

    with tempfile.TemporaryDirectory() as output_dir:
        outcome = end_to_end_pipeline(output_dir)

    print("\n" + "=" * 70)
    print("Results")
    print("=" * 70)
    for name, (summary, results) in outcome.items():
        statistic = results[0].statistic
        print(f"\n{name} day: S(4,2) = {statistic:.4f} -> {consistent_decision(statistic)}")
        for result in results:
            verdict = "reject" if result.reject else "do not reject"
            print(f"  H0 {result.null_hypothesis:<8}  cutoff {result.cutoff:.4f}  standardized {result.standardized}  {verdict}")
        print(f"  jump share of quadratic variation: {results[0].jump_share:.3f}")


if __name__ == "__main__":
    main()
