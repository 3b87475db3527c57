"""Command-line entry point: ``python -m skyjam.main {run,sweep,validate}``.

Exit codes: 0 success, 1 bad input, 2 infeasible problem, 3 solver failure.
"""

import argparse
import asyncio
import contextlib
import logging
import math
import signal
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from pydantic import ValidationError

from skyjam import config
from skyjam.models import RunSummary, ScenarioConfig, SchemeId, SweepSpec
from skyjam.optimizer import InfeasibleProblemError, run_scheme
from skyjam.oracle import monte_carlo_eve_check
from skyjam.rates import check_feasibility, objective
from skyjam.reporting import write_run, write_sweep
from skyjam.scenario import (
    SWEEP_DEFAULTS,
    SWEEP_PARAMETERS,
    ScenarioError,
    dbm_to_watts,
    dump_scenario,
    load_scenario_file,
    with_parameter,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EVE_CHECK_SAMPLES = 10_000


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ScenarioError, OSError, ValidationError)):
        return EXIT_INPUT
    if isinstance(exc, InfeasibleProblemError):
        return EXIT_INFEASIBLE
    return EXIT_SOLVER


def solve_and_write(
    scenario: ScenarioConfig,
    scheme: SchemeId,
    out_dir: str | Path | None,
    max_outer: int,
    *,
    seed: int | None = None,
    metadata: dict[str, str] | None = None,
) -> RunSummary:
    started = time.monotonic()
    state, trace = run_scheme(scenario, scheme, max_outer)
    runtime = time.monotonic() - started

    meta = dict(metadata or {})
    if seed is not None:
        margin = monte_carlo_eve_check(state, scenario, EVE_CHECK_SAMPLES, seed)
        meta.update(seed=str(seed), eve_check_margin=f"{margin:.9g}")
    summary = RunSummary(
        scheme=scheme,
        objective=objective(state, scenario),
        iterations=len(trace.records) - 1,
        converged=trace.converged,
        runtime_sec=runtime,
        feasibility=check_feasibility(state, scenario),
        last_record=trace.records[-1],
        metadata=meta,
    )
    if out_dir is not None:
        write_run(out_dir, state, trace, summary)
    return summary


def cmd_run(scenario_path: str, scheme: SchemeId, out_dir: str, max_outer: int, seed: int | None = None) -> int:
    try:
        scenario = load_scenario_file(scenario_path)
        summary = solve_and_write(scenario, scheme, out_dir, max_outer, seed=seed)
    except Exception as e:
        code = exit_code_for(e)
        if code == EXIT_SOLVER:
            log.exception(f"run failed: {e}")
        else:
            log.error(f"run failed: {e}")
        return code
    log.info(
        f"{scheme}: objective {summary.objective:.6f} after {summary.iterations} iterations, "
        f"feasible={summary.feasibility.overall_feasible}"
    )
    return EXIT_OK


# --- Sweeps ---

def sweep_value(parameter: str, value: float) -> float:
    """Command-line sweep values use file units: Γ in dBm, everything else as is."""
    return dbm_to_watts(value) if parameter == "interference_threshold" else value


def sweep_point(
    scenario: ScenarioConfig,
    parameter: str,
    value: float,
    scheme: str,
    max_outer: int,
    point_dir: str | None,
) -> dict:
    row = {
        "parameter_value": value, "scheme": str(scheme), "objective": math.nan,
        "iterations": 0, "feasible": False, "exit_code": EXIT_OK,
    }
    try:
        variant = with_parameter(scenario, parameter, sweep_value(parameter, value))
        summary = solve_and_write(
            variant, SchemeId(scheme), point_dir, max_outer, metadata={"parameter": parameter, "value": f"{value:g}"},
        )
        row.update(
            objective=summary.objective, iterations=summary.iterations,
            feasible=summary.feasibility.overall_feasible,
        )
    except Exception as e:
        log.exception(f"sweep point {parameter}={value:g} {scheme} failed")
        row["exit_code"] = exit_code_for(e)
    return row


async def _cancel_on_stop(stop: asyncio.Event, futures: list[asyncio.Future]) -> None:
    await stop.wait()
    log.warning("stop requested, cancelling pending sweep points")
    for future in futures:
        future.cancel()


async def run_sweep(
    scenario: ScenarioConfig,
    sweep: SweepSpec,
    out_dir: str | Path,
    max_outer: int,
    workers: int,
    emit_per_point: bool,
) -> list[dict]:
    loop = asyncio.get_running_loop()
    stop = asyncio.Event()
    for sig in (signal.SIGTERM, signal.SIGINT):
        with contextlib.suppress(NotImplementedError, RuntimeError):
            loop.add_signal_handler(sig, stop.set)

    points = [(value, str(scheme)) for value in sweep.values for scheme in sweep.schemes]
    log.info(f"sweeping {sweep.parameter} over {len(points)} points with {workers} workers")
    with ProcessPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [
            loop.run_in_executor(
                pool, sweep_point, scenario, sweep.parameter, value, scheme, max_outer,
                str(Path(out_dir) / "points" / f"{sweep.parameter}_{value:g}_{scheme}") if emit_per_point else None,
            )
            for value, scheme in points
        ]
        watcher = asyncio.create_task(_cancel_on_stop(stop, futures))
        results = await asyncio.gather(*futures, return_exceptions=True)
        watcher.cancel()

    rows = []
    for (value, scheme), result in zip(points, results):
        if isinstance(result, BaseException):
            rows.append({
                "parameter_value": value, "scheme": scheme, "objective": math.nan,
                "iterations": 0, "feasible": False, "exit_code": exit_code_for(result),
            })
        else:
            rows.append(result)
    return rows


def cmd_sweep(
    scenario_path: str,
    sweep: SweepSpec,
    out_dir: str,
    max_outer: int,
    workers: int = config.SWEEP_WORKERS,
    emit_per_point: bool = False,
    *,
    defaulted: bool = False,
) -> int:
    try:
        scenario = load_scenario_file(scenario_path)
    except (ScenarioError, OSError) as e:
        log.error(f"cannot load scenario: {e}")
        return EXIT_INPUT

    rows = asyncio.run(run_sweep(scenario, sweep, out_dir, max_outer, workers, emit_per_point))
    path = write_sweep(out_dir, rows, sweep, defaulted=defaulted)
    failed = [r for r in rows if r["exit_code"] != EXIT_OK]
    log.info(f"wrote {len(rows)} rows to {path} ({len(failed)} failed)")
    if len(failed) == len(rows):
        return failed[0]["exit_code"]
    return EXIT_OK


def cmd_validate(scenario_path: str) -> int:
    try:
        scenario = load_scenario_file(scenario_path)
    except (ScenarioError, OSError) as e:
        log.error(f"invalid scenario: {e}")
        return EXIT_INPUT
    sys.stdout.write(dump_scenario(scenario))
    return EXIT_OK


# --- Argument parsing ---

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skyjam", description="Secrecy-rate optimization for a source/jammer UAV pair.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="optimize one scheme and write result files")
    run.add_argument("--scenario", required=True)
    run.add_argument("--scheme", type=SchemeId, choices=list(SchemeId), default=SchemeId.PROPOSED)
    run.add_argument("--out", required=True)
    run.add_argument("--max-outer", type=int, default=config.MAX_OUTER)
    run.add_argument("--seed", type=int, help="also check the eavesdropper bound by Monte Carlo with this seed")

    sweep = sub.add_parser("sweep", help="run schemes over a parameter grid")
    sweep.add_argument("--scenario", required=True)
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sweep.add_argument("--values", type=float, nargs="+", help="interference thresholds in dBm")
    sweep.add_argument("--schemes", type=SchemeId, nargs="+", default=[SchemeId.PROPOSED])
    sweep.add_argument("--max-outer", type=int, default=config.MAX_OUTER)
    sweep.add_argument("--workers", type=int, default=config.SWEEP_WORKERS)
    sweep.add_argument("--emit-per-point", action="store_true")

    validate = sub.add_parser("validate", help="check a scenario file and print its canonical form")
    validate.add_argument("--scenario", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=config.LOG_LEVEL,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )

    if args.command == "run":
        return cmd_run(args.scenario, args.scheme, args.out, args.max_outer, args.seed)
    if args.command == "sweep":
        defaulted = args.values is None
        values = SWEEP_DEFAULTS[args.param] if defaulted else args.values
        try:
            sweep = SweepSpec(parameter=args.param, values=values, schemes=args.schemes)
        except ValidationError as e:
            log.error(f"invalid sweep: {e}")
            return EXIT_INPUT
        return cmd_sweep(
            args.scenario, sweep, args.out, args.max_outer, args.workers, args.emit_per_point, defaulted=defaulted,
        )
    return cmd_validate(args.scenario)


if __name__ == "__main__":
    sys.exit(main())
