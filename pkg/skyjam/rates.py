"""Rates, secrecy, interference, the P1 objective and the feasibility checker."""

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from skyjam import config
from skyjam.channel import los_gain, worst_case_gain_je, worst_case_gain_se
from skyjam.models import FeasibilityReport, ScenarioConfig

LN2 = np.log(2.0)


@dataclass(frozen=True)
class SolutionState:
    """One BCD iterate: schedule (K, N), user_power (K, N), jam_power (N,), traj_s and traj_j (N, 2).

    Construction checks shapes and finiteness only; value constraints are
    reported by ``check_feasibility``.
    """

    schedule: np.ndarray
    user_power: np.ndarray
    jam_power: np.ndarray
    traj_s: np.ndarray
    traj_j: np.ndarray

    def __post_init__(self):
        for field in dataclasses.fields(self):
            arr = np.array(getattr(self, field.name), dtype=float)
            arr.setflags(write=False)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{field.name}: non-finite entries")
            object.__setattr__(self, field.name, arr)
        if self.schedule.ndim != 2:
            raise ValueError("schedule: expected a (K, N) matrix")
        k, n = self.schedule.shape
        if self.user_power.shape != (k, n):
            raise ValueError(f"user_power: expected shape {(k, n)}, got {self.user_power.shape}")
        if self.jam_power.shape != (n,):
            raise ValueError(f"jam_power: expected shape {(n,)}, got {self.jam_power.shape}")
        for name in ("traj_s", "traj_j"):
            if getattr(self, name).shape != (n, 2):
                raise ValueError(f"{name}: expected shape {(n, 2)}, got {getattr(self, name).shape}")

    @property
    def num_users(self) -> int:
        return self.schedule.shape[0]

    @property
    def num_slots(self) -> int:
        return self.schedule.shape[1]

    def replace(self, **changes) -> "SolutionState":
        return dataclasses.replace(self, **changes)


class LinkGains(NamedTuple):
    sd: float
    se: float
    je: float


class SlotSecrecy(NamedTuple):
    clamped: float
    unclamped: float


@dataclass(frozen=True)
class SlotGains:
    sd: np.ndarray  # (K, N)
    se: np.ndarray  # (N,) worst case
    je: np.ndarray  # (N,) worst case
    su: np.ndarray  # (R, N)
    ju: np.ndarray  # (R, N)


# --- Per-slot rates ---

def rate_user(p_k, gain_sd, noise):
    return np.log1p(np.asarray(p_k) * gain_sd / noise) / LN2


def rate_eve(p_k, gain_se, p_j, gain_je, noise):
    return np.log1p(np.asarray(p_k) * gain_se / (np.asarray(p_j) * gain_je + noise)) / LN2


def secrecy_rate_slot(p_k, gains: LinkGains, p_j, noise) -> SlotSecrecy:
    unclamped = rate_user(p_k, gains.sd, noise) - rate_eve(p_k, gains.se, p_j, gains.je, noise)
    return SlotSecrecy(np.maximum(unclamped, 0.0), unclamped)


# --- Whole-horizon evaluation ---

def slot_gains(state: SolutionState, scenario: ScenarioConfig, *, strict: bool = True) -> SlotGains:
    users = np.asarray(scenario.user_positions, dtype=float)
    pus = np.asarray(scenario.pu_positions, dtype=float).reshape(-1, 2)
    rho0 = scenario.ref_gain
    return SlotGains(
        sd=np.stack([los_gain(state.traj_s, w, scenario.alt_s, rho0) for w in users]),
        se=worst_case_gain_se(
            state.traj_s, scenario.eve_center, scenario.eve_radius, scenario.alt_s, rho0, strict=strict,
        ),
        je=worst_case_gain_je(state.traj_j, scenario.eve_center, scenario.eve_radius, scenario.alt_j, rho0),
        su=np.array([los_gain(state.traj_s, w, scenario.alt_s, rho0) for w in pus]).reshape(len(pus), state.num_slots),
        ju=np.array([los_gain(state.traj_j, w, scenario.alt_j, rho0) for w in pus]).reshape(len(pus), state.num_slots),
    )


def secrecy_matrix(
    state: SolutionState,
    scenario: ScenarioConfig,
    *,
    clamp: bool = True,
    gains: SlotGains | None = None,
) -> np.ndarray:
    """(K, N) per-slot secrecy rates of every user at the state's powers."""
    if gains is None:
        gains = slot_gains(state, scenario)
    rates = secrecy_rate_slot(
        state.user_power, LinkGains(gains.sd, gains.se, gains.je), state.jam_power, scenario.noise_power,
    )
    return rates.clamped if clamp else rates.unclamped


def objective_with_gains(state: SolutionState, scenario: ScenarioConfig, gain_se, gain_je) -> np.ndarray:
    """Objective for explicit eavesdropper gains; leading axes of the gains broadcast over samples."""
    users = np.asarray(scenario.user_positions, dtype=float)
    sd = np.stack([los_gain(state.traj_s, w, scenario.alt_s, scenario.ref_gain) for w in users])
    gain_se = np.asarray(gain_se, dtype=float)[..., None, :]
    gain_je = np.asarray(gain_je, dtype=float)[..., None, :]
    secrecy = secrecy_rate_slot(state.user_power, LinkGains(sd, gain_se, gain_je), state.jam_power, scenario.noise_power)
    weighted = state.schedule * secrecy.clamped
    return weighted.reshape(weighted.shape[:-2] + (-1,)).sum(axis=-1) / state.num_slots


def objective(state: SolutionState, scenario: ScenarioConfig) -> float:
    rates = secrecy_matrix(state, scenario)
    return float(np.sum(state.schedule * rates) / state.num_slots)


def user_average_rates(state: SolutionState, scenario: ScenarioConfig, *, gains: SlotGains | None = None) -> np.ndarray:
    rates = secrecy_matrix(state, scenario, gains=gains)
    return np.sum(state.schedule * rates, axis=1) / state.num_slots


def interference_profile(state: SolutionState, scenario: ScenarioConfig, *, gains: SlotGains | None = None) -> np.ndarray:
    """Average received interference at every PU, length R."""
    if gains is None:
        gains = slot_gains(state, scenario)
    user_part = np.sum(state.schedule * state.user_power, axis=0)
    return np.mean(state.jam_power * gains.ju + user_part * gains.su, axis=1)


def interference_at_pu(state: SolutionState, scenario: ScenarioConfig, r: int) -> float:
    if not 0 <= r < scenario.num_pus:
        raise IndexError(f"pu index {r} out of range")
    return float(interference_profile(state, scenario)[r])


# --- Feasibility ---

def _speed_violation(traj: np.ndarray, limit: float) -> float:
    if len(traj) < 2:
        return 0.0
    steps = np.linalg.norm(np.diff(traj, axis=0), axis=1)
    return float(max(np.max(steps) - limit, 0.0))


def check_feasibility(
    state: SolutionState,
    scenario: ScenarioConfig,
    tol: float = config.FEASIBILITY_TOL,
) -> FeasibilityReport:
    theta = state.schedule
    n_slots = state.num_slots
    gains = slot_gains(state, scenario, strict=False)

    eve_gap = np.linalg.norm(state.traj_s - np.asarray(scenario.eve_center), axis=1)
    thresholds = np.asarray(scenario.interference_threshold, dtype=float)
    interference = interference_profile(state, scenario, gains=gains)
    endpoints = max(
        float(np.linalg.norm(state.traj_s[0] - scenario.start_s)),
        float(np.linalg.norm(state.traj_s[-1] - scenario.end_s)),
        float(np.linalg.norm(state.traj_j[0] - scenario.start_j)),
        float(np.linalg.norm(state.traj_j[-1] - scenario.end_j)),
    )

    values = {
        "scheduling_sum": float(max(np.max(theta.sum(axis=0)) - 1.0, 0.0)),
        "binariness": float(np.max(np.minimum(np.abs(theta), np.abs(1.0 - theta)))),
        "min_secrecy": float(max(np.max(scenario.r_min - user_average_rates(state, scenario, gains=gains)), 0.0)),
        "peak_user_power": float(max(np.max(state.user_power) - scenario.p_s_max, 0.0)),
        "avg_user_power": float(max(np.sum(theta * state.user_power) / n_slots - scenario.p_s_ave, 0.0)),
        "peak_jam_power": float(max(np.max(state.jam_power) - scenario.p_j_max, 0.0)),
        "avg_jam_power": float(max(np.mean(state.jam_power) - scenario.p_j_ave, 0.0)),
        "endpoints": endpoints,
        "speed": max(
            _speed_violation(state.traj_s, scenario.slot_len * scenario.v_max_s),
            _speed_violation(state.traj_j, scenario.slot_len * scenario.v_max_j),
        ),
        "interference": float(np.max((interference - thresholds) / thresholds, initial=0.0)),
        "eve_disc": float(np.max(scenario.eve_radius - eve_gap, initial=0.0)),
        "nonnegativity": float(max(
            -np.min(state.user_power), -np.min(state.jam_power), -np.min(theta), 0.0,
        )),
    }
    report = FeasibilityReport(
        **values, tolerance=tol, endpoint_tolerance=config.ENDPOINT_TOL, overall_feasible=True,
    )
    return report.model_copy(update={"overall_feasible": not report.failed()})
