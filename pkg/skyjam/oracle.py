"""Independent checks for the optimizer: brute force, finite differences, Monte Carlo.

Nothing in the optimizer imports this module.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from skyjam.channel import los_gain, worst_case_gain_je, worst_case_gain_se
from skyjam.convex_core import SolverError, SolveStatus, solve_program
from skyjam.models import ScenarioConfig
from skyjam.rates import LinkGains, SolutionState, objective, objective_with_gains, secrecy_rate_slot, slot_gains
from skyjam.subproblems import build_power_program

log = logging.getLogger(__name__)

MAX_CANDIDATES = 2_000_000
GRADIENT_FLOOR = 1.0  # below this magnitude the error is absolute


@dataclass(frozen=True)
class GridSpec:
    lower: float
    upper: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("grid needs at least 2 points")
        if not self.lower < self.upper:
            raise ValueError("grid needs lower < upper")

    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.count)


@dataclass(frozen=True)
class SlotInstance:
    """Gains and caps of a one-slot horizon with its scheduled user."""

    gain_sd: float
    gain_se: float
    gain_je: float
    gain_su: np.ndarray
    gain_ju: np.ndarray
    thresholds: np.ndarray
    noise: float
    p_cap: float
    p_j_cap: float


def fd_gradient_check(f, x, step: float = 1e-6) -> float:
    """Largest componentwise error between ``f``'s gradient and central differences.

    Each error is divided by max(|analytic|, |numeric|, 1), so it is relative
    for large components and absolute for small ones.
    """
    x = np.asarray(x, dtype=float)
    _, grad = f(x)
    grad = np.asarray(grad, dtype=float).ravel()
    numeric = np.empty_like(x)
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        shift = np.zeros_like(x)
        shift[i] = h
        numeric[i] = (f(x + shift)[0] - f(x - shift)[0]) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), GRADIENT_FLOOR)
    return float(np.max(np.abs(grad - numeric) / denom, initial=0.0))


def exhaustive_schedule_oracle(rates, r_min: float, power_caps=()) -> tuple[float, np.ndarray | None]:
    """Best binary schedule by enumeration; ``power_caps`` holds (weights, cap) rows Σ weights·θ ≤ cap.

    Returns (-inf, None) when no schedule meets r_min.
    """
    rates = np.asarray(rates, dtype=float)
    num_users, n_slots = rates.shape
    if (num_users + 1) ** n_slots > MAX_CANDIDATES:
        raise ValueError("instance too large for enumeration")

    best_value, best = -np.inf, None
    slots = np.arange(n_slots)
    for choice in itertools.product(range(num_users + 1), repeat=n_slots):
        choice = np.asarray(choice)
        schedule = np.zeros_like(rates)
        active = choice > 0
        schedule[choice[active] - 1, slots[active]] = 1.0
        per_user = np.sum(schedule * rates, axis=1) / n_slots
        if np.any(per_user < r_min - 1e-12):
            continue
        if any(np.sum(weights * schedule) > cap + 1e-12 for weights, cap in power_caps):
            continue
        value = float(per_user.sum())
        if value > best_value:
            best_value, best = value, schedule
    return best_value, best


def slot_instance(state: SolutionState, scenario: ScenarioConfig, n: int = 0) -> SlotInstance:
    if state.num_slots != 1:
        raise ValueError("slot instances need a one-slot horizon")
    gains = slot_gains(state, scenario)
    k = int(np.argmax(state.schedule[:, n]))
    return SlotInstance(
        gain_sd=float(gains.sd[k, n]),
        gain_se=float(gains.se[n]),
        gain_je=float(gains.je[n]),
        gain_su=gains.su[:, n],
        gain_ju=gains.ju[:, n],
        thresholds=np.asarray(scenario.interference_threshold, dtype=float),
        noise=scenario.noise_power,
        p_cap=min(scenario.p_s_max, scenario.p_s_ave),
        p_j_cap=min(scenario.p_j_max, scenario.p_j_ave),
    )


def grid_power_oracle(
    instance: SlotInstance,
    grid: tuple[GridSpec | None, GridSpec | None] = (None, None),
    count: int = 200,
) -> tuple[float, float, float]:
    """Grid maximizer (p_k, p_j, value) of the unclamped secrecy rate within the caps."""
    grid_p, grid_j = grid
    p_points = (grid_p or GridSpec(0.0, instance.p_cap, count)).points()
    if grid_j is not None:
        j_points = grid_j.points()
    elif instance.p_j_cap > 0:
        j_points = GridSpec(0.0, instance.p_j_cap, count).points()
    else:
        j_points = np.zeros(1)

    p, pj = np.meshgrid(p_points, j_points, indexing="ij")
    feasible = (p <= instance.p_cap * (1 + 1e-12)) & (pj <= instance.p_j_cap * (1 + 1e-12))
    for su, ju, threshold in zip(instance.gain_su, instance.gain_ju, instance.thresholds):
        feasible &= p * su + pj * ju <= threshold * (1 + 1e-12)
    if not feasible.any():
        raise ValueError("empty feasible grid")

    gains = LinkGains(instance.gain_sd, instance.gain_se, instance.gain_je)
    values = np.where(feasible, secrecy_rate_slot(p, gains, pj, instance.noise).unclamped, -np.inf)
    i, j = np.unravel_index(np.argmax(values), values.shape)
    return float(p[i, j]), float(pj[i, j]), float(values[i, j])


def power_fixed_point(
    state: SolutionState,
    scenario: ScenarioConfig,
    max_iter: int = 100,
    tol: float = 1e-10,
) -> SolutionState:
    """Re-solve the power surrogate around its own optimum until the objective stops moving."""
    for i in range(max_iter):
        program = build_power_program(state, scenario)
        report = solve_program(program)
        if report.status not in (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER):
            raise SolverError(report.status, f"power fixed point: {report.status} at step {i}")
        candidate = program.apply(report.x_opt, state)
        gain = objective(candidate, scenario) - objective(state, scenario)
        if gain < -1e-12:
            break
        state = candidate
        if gain <= tol:
            break
    return state


def monte_carlo_eve_check(state: SolutionState, scenario: ScenarioConfig, samples: int, seed: int) -> float:
    """Worst sampled objective minus the worst-case-bound objective; never below zero for a sound bound."""
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    radius = scenario.eve_radius * np.sqrt(rng.random(samples))
    angle = 2 * np.pi * rng.random(samples)
    eve = np.asarray(scenario.eve_center, dtype=float) + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])

    sampled = objective_with_gains(
        state, scenario,
        los_gain(state.traj_s[None, :, :], eve[:, None, :], scenario.alt_s, scenario.ref_gain),
        los_gain(state.traj_j[None, :, :], eve[:, None, :], scenario.alt_j, scenario.ref_gain),
    )
    bound = objective_with_gains(
        state, scenario,
        worst_case_gain_se(state.traj_s, scenario.eve_center, scenario.eve_radius, scenario.alt_s, scenario.ref_gain)[None, :],
        worst_case_gain_je(state.traj_j, scenario.eve_center, scenario.eve_radius, scenario.alt_j, scenario.ref_gain)[None, :],
    )
    return float(np.min(sampled) - bound[0])
