"""Block coordinate descent over scheduling, powers and both trajectories."""

import logging
import math
import time
from collections.abc import Callable
from functools import partial

import numpy as np

from skyjam import config
from skyjam.convex_core import SolveReport, SolverError, SolveStatus, solve_program
from skyjam.models import BlockRecord, IterationRecord, IterationTrace, ScenarioConfig, SchemeId
from skyjam.rates import SolutionState, check_feasibility, interference_profile, objective, secrecy_matrix
from skyjam.scenario import ScenarioError, centroid
from skyjam.subproblems import (
    build_j_trajectory_program,
    build_power_program,
    build_s_trajectory_program,
    build_scheduling_lp,
    repair_schedule,
    round_schedule,
    schedule_coupling,
    schedule_rate_matrix,
)

log = logging.getLogger(__name__)

OBJECTIVE_SLACK = 1e-12
REPAIR_MARGIN = 1e-9


class InfeasibleProblemError(RuntimeError):
    def __init__(self, message: str, *, block: str, iteration: int):
        super().__init__(f"{block} at iteration {iteration}: {message}")
        self.block = block
        self.iteration = iteration


# --- Initialization ---

def _initial_path(start, end, center, num_slots: int, step: float, direction: float) -> np.ndarray:
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if num_slots == 1:
        return start[None, :].copy()
    if np.linalg.norm(start - end) > config.ENDPOINT_TOL:
        frac = np.linspace(0.0, 1.0, num_slots)[:, None]
        return start + frac * (end - start)

    offset = start - center
    radius = float(np.linalg.norm(offset))
    if num_slots > 2 and 2 * radius * math.sin(math.pi / (num_slots - 1)) > step + 1e-9:
        raise ScenarioError(f"initial circle of radius {radius:.3f} m violates the speed limit")
    phase = math.atan2(offset[1], offset[0])
    angles = phase + direction * 2 * math.pi * np.arange(num_slots) / (num_slots - 1)
    path = center + radius * np.column_stack([np.cos(angles), np.sin(angles)])
    path[0], path[-1] = start, end
    return path


def repair_powers(state: SolutionState, scenario: ScenarioConfig) -> SolutionState:
    """Scale P and P_J by one common factor until the average-power and interference caps hold."""
    ratios = [np.sum(state.schedule * state.user_power) / state.num_slots / scenario.p_s_ave]
    if scenario.p_j_ave > 0:
        ratios.append(np.mean(state.jam_power) / scenario.p_j_ave)
    elif np.any(state.jam_power > 0):
        ratios.append(math.inf)
    ratios.extend(interference_profile(state, scenario) / np.asarray(scenario.interference_threshold))
    worst = float(max(ratios))
    if worst <= 1.0 + 1e-12:
        return state
    factor = 0.0 if math.isinf(worst) else (1.0 - REPAIR_MARGIN) / worst
    log.debug(f"scaling powers by {factor:.4g} to restore the power and interference caps")
    return state.replace(user_power=state.user_power * factor, jam_power=state.jam_power * factor)


def init_solution(scenario: ScenarioConfig) -> SolutionState:
    """Circular constant-speed paths around the user centroid, round-robin schedule, average powers.

    S circles counterclockwise and J clockwise. Powers start at their averages
    and are scaled down together when the PU interference cap requires it.
    """
    n_slots, k_users = scenario.num_slots, scenario.num_users
    center = centroid(scenario)
    traj_s = _initial_path(
        scenario.start_s, scenario.end_s, center, n_slots, scenario.slot_len * scenario.v_max_s, 1.0,
    )
    traj_j = _initial_path(
        scenario.start_j, scenario.end_j, center, n_slots, scenario.slot_len * scenario.v_max_j, -1.0,
    )
    gap = np.linalg.norm(traj_s - np.asarray(scenario.eve_center), axis=1)
    if np.min(gap) < scenario.eve_radius - config.FEASIBILITY_TOL:
        raise ScenarioError("initial S path enters the uncertainty disc")

    schedule = np.zeros((k_users, n_slots))
    schedule[np.arange(n_slots) % k_users, np.arange(n_slots)] = 1.0
    state = SolutionState(
        schedule=schedule,
        user_power=np.full((k_users, n_slots), scenario.p_s_ave),
        jam_power=np.full(n_slots, scenario.p_j_ave),
        traj_s=traj_s,
        traj_j=traj_j,
    )
    return repair_powers(state, scenario)


def apply_power_cutoff(state: SolutionState, scenario: ScenarioConfig) -> SolutionState:
    """Zero the user power of every scheduled slot whose unclamped secrecy rate is negative."""
    rates = secrecy_matrix(state, scenario, clamp=False)
    mask = (state.schedule > 0) & (rates < 0)
    if not mask.any():
        return state
    user_power = np.array(state.user_power)
    user_power[mask] = 0.0
    return state.replace(user_power=user_power)


def objective_upper_bound(scenario: ScenarioConfig) -> float:
    """Zero-leakage capacity at peak power with S hovering over the user."""
    snr = scenario.p_s_max * scenario.ref_gain / (scenario.noise_power * scenario.alt_s ** 2)
    return math.log2(1 + snr)


# --- Blocks ---

BlockFn = Callable[[SolutionState, ScenarioConfig], tuple[SolutionState | None, SolveReport]]


def _schedule_block(state, scenario, *, adjust_powers=True):
    """Scheduling LP, rounding and min-rate repair.

    Without ``adjust_powers`` the powers stay as they are, so a rounded
    schedule that breaks a power or interference cap is left for the
    acceptance test to reject.
    """
    program = build_scheduling_lp(state, scenario)
    report = solve_program(program)
    if report.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
        return None, report
    relaxed = program.apply(report.x_opt, state).schedule
    rates = schedule_rate_matrix(state, scenario)
    coupling = () if adjust_powers else schedule_coupling(state, scenario)
    rounded = repair_schedule(round_schedule(relaxed, rates), rates, scenario.r_min, coupling)
    candidate = state.replace(schedule=rounded)
    return (repair_powers(candidate, scenario) if adjust_powers else candidate), report


def _power_block(state, scenario, *, free_user_power=True, free_jam_power=True):
    program = build_power_program(
        state, scenario, free_user_power=free_user_power, free_jam_power=free_jam_power,
    )
    report = solve_program(program)
    if report.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
        return None, report
    return apply_power_cutoff(program.apply(report.x_opt, state), scenario), report


def _trajectory_block(builder, state, scenario):
    program = builder(state, scenario)
    report = solve_program(program)
    if report.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
        return None, report
    return program.apply(report.x_opt, state), report


BLOCKS: dict[str, BlockFn] = {
    "P1.1": _schedule_block,
    "P1.2": _power_block,
    "P1.2:user": partial(_power_block, free_jam_power=False),
    "P1.2:jam": partial(_power_block, free_user_power=False),
    "P1.3": partial(_trajectory_block, build_s_trajectory_program),
    "P1.4": partial(_trajectory_block, build_j_trajectory_program),
}

SCHEME_BLOCKS: dict[SchemeId, tuple[str, ...]] = {
    SchemeId.PROPOSED: ("P1.1", "P1.2", "P1.3", "P1.4"),
    SchemeId.BENCHMARK_I: ("P1.1",),
    SchemeId.BENCHMARK_II: ("P1.1", "P1.2:user", "P1.3"),
    SchemeId.BENCHMARK_III: ("P1.1", "P1.2:jam", "P1.4"),
    SchemeId.NPC: ("P1.1", "P1.3", "P1.4"),
}


def _acceptable(candidate: SolutionState, state: SolutionState, scenario: ScenarioConfig, name: str) -> bool:
    before = check_feasibility(state, scenario)
    ignore = ("min_secrecy",) if before.min_secrecy > before.tolerance else ()
    failed = check_feasibility(candidate, scenario).failed(ignore=ignore)
    if failed:
        log.warning(f"{name}: rejected, candidate violates {', '.join(failed)}")
        return False
    gain = objective(candidate, scenario) - objective(state, scenario)
    if gain < -OBJECTIVE_SLACK:
        log.debug(f"{name}: rejected, objective change {gain:.3g}")
        return False
    return True


def _run_block(name: str, block: BlockFn, state: SolutionState, scenario: ScenarioConfig, iteration: int):
    candidate, report = block(state, scenario)
    if report.status == SolveStatus.INFEASIBLE:
        raise InfeasibleProblemError(report.message or "subproblem infeasible", block=name, iteration=iteration)
    if report.status == SolveStatus.UNBOUNDED:
        raise SolverError(report.status, f"{name} at iteration {iteration}: unbounded")
    if report.status == SolveStatus.MAX_ITER:
        log.warning(f"{name}: solver stopped at max_iter (stationarity {report.kkt_stationarity:.3g})")

    accepted = candidate is not None and _acceptable(candidate, state, scenario, name)
    log.debug(f"{name}: {report.status}, accepted={accepted}, {report.iterations} iterations")
    record = BlockRecord(
        name=name,
        status=str(report.status),
        accepted=accepted,
        kkt_stationarity=report.kkt_stationarity,
        kkt_feasibility=report.kkt_feasibility,
        iterations=report.iterations,
    )
    return (candidate if accepted else state), record


# --- Outer loop ---

def run_blocks(
    scenario: ScenarioConfig,
    state: SolutionState,
    blocks: tuple[str, ...],
    max_outer: int = config.MAX_OUTER,
) -> tuple[SolutionState, IterationTrace]:
    """Cycle ``blocks`` until the objective gains at most ε per outer iteration.

    The power cutoff runs on the final state only when a power block is part
    of the cycle, and only then may the scheduling block rescale powers, so
    schemes without power control keep their powers.
    """
    bound = objective_upper_bound(scenario)
    if scenario.r_min > bound:
        raise InfeasibleProblemError(
            f"r_min {scenario.r_min} exceeds the zero-leakage bound {bound:.4g}", block="scenario", iteration=0,
        )

    power_control = any(name.startswith("P1.2") for name in blocks)
    steps = {name: BLOCKS[name] for name in blocks}
    if "P1.1" in steps and not power_control:
        steps["P1.1"] = partial(_schedule_block, adjust_powers=False)

    started = time.monotonic()
    current = objective(state, scenario)
    trace = IterationTrace(records=[IterationRecord(iteration=0, objective=current, delta=0.0, wall_time=0.0)])
    for m in range(1, max_outer + 1):
        previous = current
        records = []
        for name in blocks:
            state, record = _run_block(name, steps[name], state, scenario, m)
            records.append(record)
        current = objective(state, scenario)
        delta = current - previous
        elapsed = time.monotonic() - started
        trace.records.append(
            IterationRecord(iteration=m, objective=current, delta=delta, wall_time=elapsed, blocks=records)
        )
        log.info(f"iteration {m}: objective {current:.6f}, delta {delta:.3g}, {elapsed:.1f}s")
        if delta <= scenario.epsilon:
            trace.converged = True
            break

    if power_control:
        state = apply_power_cutoff(state, scenario)
    report = check_feasibility(state, scenario)
    if not report.overall_feasible:
        log.warning(f"final state violates {', '.join(report.failed())}")
    return state, trace


def bcd_solve(
    scenario: ScenarioConfig,
    max_outer: int = config.MAX_OUTER,
    state: SolutionState | None = None,
) -> tuple[SolutionState, IterationTrace]:
    return run_scheme(scenario, SchemeId.PROPOSED, max_outer, state)


def run_scheme(
    scenario: ScenarioConfig,
    scheme: SchemeId,
    max_outer: int = config.MAX_OUTER,
    state: SolutionState | None = None,
) -> tuple[SolutionState, IterationTrace]:
    if state is None:
        state = init_solution(scenario)
    log.info(f"running {scheme} over {scenario.num_slots} slots")
    return run_blocks(scenario, state, SCHEME_BLOCKS[SchemeId(scheme)], max_outer)
