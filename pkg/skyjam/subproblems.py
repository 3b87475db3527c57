"""Convex surrogates of the four BCD blocks, built around the current iterate.

Each builder returns a ``BlockProgram`` over one flat solver vector. Every
program maximizes the sum of per-user epigraph variables η_k under rows
η_k − (1/N) Σ_n θ_k(n) · surrogate_k(n) ≤ 0, where the surrogate is a concave
under-estimator of the unclamped secrecy rate that is tight at the
expansion point.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy import optimize, sparse

from skyjam.channel import los_gain, worst_case_gain_je, worst_case_gain_se
from skyjam.convex_core import ConstraintBlock, ConvexProgram, linear_objective
from skyjam.models import ScenarioConfig
from skyjam.rates import LN2, LinkGains, SolutionState, secrecy_matrix, slot_gains

log = logging.getLogger(__name__)

RHO_MIN = 1e-3  # meters
ROUND_THRESHOLD = 0.5
SCHEDULED = 1e-9  # relaxed θ above this takes part in the power program
POWER_UNIT_FLOOR = 1e-6  # smallest power scale, relative to the peak power
REPAIR_TOL = 1e-9


class VariableLayout:
    """Named, shaped slices of one flat solver vector."""

    def __init__(self):
        self.dim = 0
        self._entries: dict[str, tuple[slice, tuple[int, ...]]] = {}

    def add(self, name: str, shape: tuple[int, ...]) -> None:
        size = int(np.prod(shape))
        self._entries[name] = (slice(self.dim, self.dim + size), tuple(shape))
        self.dim += size

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def indices(self, name: str) -> np.ndarray:
        sl, shape = self._entries[name]
        return np.arange(sl.start, sl.stop).reshape(shape)

    def view(self, x: np.ndarray, name: str) -> np.ndarray:
        sl, shape = self._entries[name]
        return np.asarray(x)[sl].reshape(shape)

    def pack(self, fill: float = 0.0, **parts) -> np.ndarray:
        x = np.full(self.dim, fill, dtype=float)
        for name, value in parts.items():
            sl, shape = self._entries[name]
            x[sl] = np.broadcast_to(np.asarray(value, dtype=float), shape).ravel()
        return x


@dataclass(frozen=True)
class ExpansionPoint:
    user_power: np.ndarray
    jam_power: np.ndarray
    traj_s: np.ndarray
    traj_j: np.ndarray

    @classmethod
    def from_state(cls, state: SolutionState) -> "ExpansionPoint":
        return cls(state.user_power, state.jam_power, state.traj_s, state.traj_j)


@dataclass(frozen=True)
class SlackVars:
    d_se: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_su: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    d_je: np.ndarray = field(default_factory=lambda: np.zeros(0))
    d_ju: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(0))


@dataclass(frozen=True)
class BlockProgram(ConvexProgram):
    layout: VariableLayout | None = None
    surrogate: Callable[[np.ndarray], np.ndarray] | None = None
    applier: Callable[[np.ndarray, SolutionState], SolutionState] | None = None

    def surrogate_rates(self, x: np.ndarray | None = None) -> np.ndarray:
        """Per-user average surrogate secrecy rate at ``x`` (default: the start)."""
        return self.surrogate(self.start if x is None else np.asarray(x, dtype=float))

    def apply(self, x: np.ndarray, state: SolutionState) -> SolutionState:
        return self.applier(np.asarray(x, dtype=float), state)

    def slacks(self, x: np.ndarray) -> SlackVars:
        parts = {name: self.layout.view(x, name) for name in ("d_se", "d_su", "d_je", "d_ju", "eta") if name in self.layout}
        return SlackVars(**parts)


# --- Shared pieces ---

def _per_user(ks: np.ndarray, values: np.ndarray, num_users: int) -> np.ndarray:
    return np.bincount(ks, weights=values, minlength=num_users).astype(float)


def _pinned(traj: np.ndarray, start, end) -> np.ndarray:
    traj = np.array(traj, dtype=float)
    traj[0] = start
    traj[-1] = end
    return traj


def _endpoint_rows(layout: VariableLayout, name: str, start, end) -> tuple[np.ndarray, np.ndarray]:
    idx = layout.indices(name)
    pins = [(0, start)] if len(idx) == 1 else [(0, start), (len(idx) - 1, end)]
    rows, rhs = [], []
    for n, point in pins:
        for c in range(2):
            row = np.zeros(layout.dim)
            row[idx[n, c]] = 1.0
            rows.append(row)
            rhs.append(float(point[c]))
    return np.array(rows), np.array(rhs)


def _speed_block(layout: VariableLayout, name: str, step: float) -> ConstraintBlock | None:
    idx = layout.indices(name)
    count = len(idx) - 1
    if count < 1:
        return None
    rows = np.arange(count)
    scale = step * step

    def fun(x):
        delta = x[idx[1:]] - x[idx[:-1]]
        jac = np.zeros((count, layout.dim))
        for c in range(2):
            jac[rows, idx[1:, c]] = 2 * delta[:, c] / scale
            jac[rows, idx[:-1, c]] = -2 * delta[:, c] / scale
        return np.sum(delta * delta, axis=1) / scale - 1.0, jac

    def conic(x):
        delta = cp.vstack([x[idx[1:, c]] - x[idx[:-1, c]] for c in range(2)])
        return [cp.norm(delta, 2, axis=0) / step <= 1.0]

    return ConstraintBlock(fun, count, f"speed:{name}", conic)


def _interference_block(
    layout: VariableLayout,
    slack: str,
    weights: np.ndarray,
    fixed: np.ndarray,
    altitude: float,
    scenario: ScenarioConfig,
) -> ConstraintBlock | None:
    """Average PU interference with the moving UAV's gain written through distance slacks.

    ``weights`` is the moving UAV's transmit power per slot, ``fixed`` the
    average interference of the other UAV per PU. Rows are scaled by Γ_r.
    """
    thresholds = np.asarray(scenario.interference_threshold, dtype=float)
    if thresholds.size == 0:
        return None
    idx = layout.indices(slack)
    n_slots = idx.shape[1]
    rho0, h2 = scenario.ref_gain, altitude * altitude
    rows = np.arange(thresholds.size)[:, None]

    def fun(x):
        u = x[idx] + h2
        values = (fixed + np.sum(weights * rho0 / u, axis=1) / n_slots) / thresholds - 1.0
        jac = np.zeros((thresholds.size, layout.dim))
        jac[rows, idx] = -weights * rho0 / (n_slots * thresholds[:, None] * u * u)
        return values, jac

    coef = np.broadcast_to(weights * rho0 / n_slots, idx.shape) / thresholds[:, None]
    spread = sparse.csr_matrix(
        (coef.ravel(), (np.repeat(np.arange(thresholds.size), n_slots), np.arange(idx.size))),
        shape=(thresholds.size, idx.size),
    )

    def conic(x):
        return [spread @ cp.inv_pos(x[idx.ravel()] + h2) <= 1.0 - fixed / thresholds]

    return ConstraintBlock(fun, thresholds.size, f"interference:{slack}", conic)


def _tangent_rows(layout: VariableLayout, slack: str, traj: str, traj_m: np.ndarray, points: np.ndarray):
    """Rows d(r, n) ≤ ‖y‖² + 2 yᵀ(q(n) − q_m(n)) with y = q_m(n) − w_r, scaled by max(1, ‖y‖²)."""
    d_idx = layout.indices(slack)
    q_idx = layout.indices(traj)
    r_count, n_slots = d_idx.shape
    if r_count == 0:
        return np.zeros((0, layout.dim)), np.zeros(0)
    y = traj_m[None, :, :] - points[:, None, :]
    y2 = np.sum(y * y, axis=2)
    scale = 1.0 / np.maximum(1.0, y2)
    r_i, n_i = np.meshgrid(np.arange(r_count), np.arange(n_slots), indexing="ij")
    rows = np.zeros((r_count, n_slots, layout.dim))
    rows[r_i, n_i, d_idx] = scale
    for c in range(2):
        rows[r_i, n_i, np.broadcast_to(q_idx[:, c], (r_count, n_slots))] = -2 * y[..., c] * scale
    rhs = (y2 - 2 * np.sum(y * traj_m[None, :, :], axis=2)) * scale
    return rows.reshape(-1, layout.dim), rhs.ravel()


def _rate_block(
    layout: VariableLayout,
    ks: np.ndarray,
    weights: np.ndarray,
    num_users: int,
    terms,
    conic_terms=None,
) -> ConstraintBlock:
    """Rows η_k − Σ weights · surrogate ≤ 0.

    ``terms(x)`` returns per-pair surrogate values and a list of
    (column indices, partial derivatives) pairs, one entry per pair each.
    ``conic_terms(x)`` is the same per-pair surrogate as a concave cvxpy expression.
    """
    eta_idx = layout.indices("eta")
    users = np.arange(num_users)
    gather = sparse.csr_matrix((weights, (ks, np.arange(ks.size))), shape=(num_users, ks.size))

    def conic(x):
        if ks.size == 0:
            return [x[eta_idx] <= 0.0]
        return [x[eta_idx] <= gather @ conic_terms(x)]

    def fun(x):
        values, partials = terms(x)
        jac = np.zeros((num_users, layout.dim))
        jac[users, eta_idx] = 1.0
        for cols, grad in partials:
            np.add.at(jac, (ks, cols), -weights * grad)
        return x[eta_idx] - _per_user(ks, weights * values, num_users), jac

    return ConstraintBlock(fun, num_users, "rate", conic if conic_terms is not None else None)


def _bounds(layout: VariableLayout, lower: dict, upper: dict) -> tuple[np.ndarray, np.ndarray]:
    return layout.pack(-np.inf, **lower), layout.pack(np.inf, **upper)


# --- P1.1: scheduling LP ---

def schedule_rate_matrix(state: SolutionState, scenario: ScenarioConfig) -> np.ndarray:
    return secrecy_matrix(state, scenario, clamp=False)


def scheduling_lp(
    rates: np.ndarray,
    r_min: float,
    *,
    theta0: np.ndarray | None = None,
    coupling: tuple[tuple[np.ndarray, float], ...] = (),
) -> BlockProgram:
    """Relaxed scheduling LP over a fixed (K, N) rate matrix.

    Each ``coupling`` entry (weights, cap) adds the row Σ weights·θ ≤ cap.
    """
    rates = np.asarray(rates, dtype=float)
    num_users, n_slots = rates.shape
    layout = VariableLayout()
    layout.add("theta", (num_users, n_slots))
    layout.add("eta", (num_users,))
    th, eta = layout.indices("theta"), layout.indices("eta")
    users = np.arange(num_users)

    average = np.zeros((num_users, layout.dim))
    average[users[:, None], th] = -rates / n_slots
    average[users, eta] = 1.0
    mass = np.zeros((n_slots, layout.dim))
    mass[np.broadcast_to(np.arange(n_slots), th.shape), th] = 1.0
    rows, rhs = [average, mass], [np.zeros(num_users), np.ones(n_slots)]
    for weights, cap in coupling:
        row = np.zeros((1, layout.dim))
        row[0, th] = weights
        rows.append(row)
        rhs.append(np.array([cap]))

    theta0 = np.zeros_like(rates) if theta0 is None else np.asarray(theta0, dtype=float)

    def surrogate(x):
        return np.sum(layout.view(x, "theta") * rates, axis=1) / n_slots

    def applier(x, state):
        return state.replace(schedule=np.clip(layout.view(x, "theta"), 0.0, 1.0))

    cost = layout.pack(eta=1.0)
    lower, upper = _bounds(layout, {"theta": 0.0, "eta": r_min}, {"theta": 1.0})
    start = layout.pack(theta=theta0, eta=np.maximum(np.sum(theta0 * rates, axis=1) / n_slots, r_min))
    return BlockProgram(
        dim=layout.dim, objective=linear_objective(cost), start=start, lower=lower, upper=upper,
        ineq_matrix=np.vstack(rows), ineq_vector=np.concatenate(rhs), linear_cost=cost, name="P1.1",
        layout=layout, surrogate=surrogate, applier=applier,
    )


def schedule_coupling(state: SolutionState, scenario: ScenarioConfig) -> tuple[tuple[np.ndarray, float], ...]:
    """Average-power and PU-interference rows (weights, cap) meaning Σ weights·θ ≤ cap at fixed powers."""
    n_slots = state.num_slots
    gains = slot_gains(state, scenario)
    coupling = [(state.user_power / (n_slots * scenario.p_s_ave), 1.0)]
    for r, threshold in enumerate(scenario.interference_threshold):
        weights = state.user_power * gains.su[r] / (n_slots * threshold)
        coupling.append((weights, 1.0 - float(np.mean(state.jam_power * gains.ju[r])) / threshold))
    return tuple(coupling)


def build_scheduling_lp(state: SolutionState, scenario: ScenarioConfig) -> BlockProgram:
    return scheduling_lp(
        schedule_rate_matrix(state, scenario), scenario.r_min,
        theta0=state.schedule, coupling=schedule_coupling(state, scenario),
    )


def round_schedule(relaxed: np.ndarray, rates: np.ndarray | None = None) -> np.ndarray:
    """Per slot, keep the user with the largest relaxed θ if it holds at least half the column mass."""
    relaxed = np.asarray(relaxed, dtype=float)
    n_slots = relaxed.shape[1]
    cols = np.arange(n_slots)
    best = np.argmax(relaxed, axis=0)
    keep = relaxed[best, cols] >= ROUND_THRESHOLD - 1e-9
    if rates is not None:
        keep &= np.asarray(rates, dtype=float)[best, cols] > 0
    out = np.zeros_like(relaxed)
    out[best[keep], cols[keep]] = 1.0
    return out


def repair_schedule(
    schedule: np.ndarray,
    rates: np.ndarray,
    r_min: float,
    coupling: tuple[tuple[np.ndarray, float], ...] = (),
) -> np.ndarray:
    """Make a rounded schedule meet ``r_min`` for every user.

    A schedule that already does is returned as is. Otherwise the exact
    integer schedule under the same ``coupling`` rows replaces it, and when
    that fails the most deficient user repeatedly takes the slot with the
    smallest net loss (owner's rate minus its own) from an owner that stays
    at or above ``r_min``, without breaking a ``coupling`` row that held.
    """
    out = np.array(schedule, dtype=float)
    rates = np.asarray(rates, dtype=float)
    num_users, n_slots = out.shape

    def averages(theta):
        return np.sum(theta * rates, axis=1) / n_slots

    if r_min <= 0 or np.all(averages(out) >= r_min - REPAIR_TOL):
        return out
    exact = integer_schedule(rates, r_min, coupling)
    if exact is not None:
        return exact

    def caps_hold(before, after):
        for weights, cap in coupling:
            load = float(np.sum(weights * after))
            if load > cap + REPAIR_TOL and load > float(np.sum(weights * before)):
                return False
        return True

    for _ in range(num_users * n_slots):
        avg = averages(out)
        gaps = r_min - avg
        if np.all(gaps <= REPAIR_TOL):
            break
        k = int(np.argmax(gaps))
        owners = np.where(out.sum(axis=0) > 0, np.argmax(out, axis=0), -1)
        best, best_loss = None, np.inf
        for n in np.flatnonzero((rates[k] > 0) & (owners != k)):
            o = owners[n]
            loss = rates[o, n] if o >= 0 else 0.0
            if o >= 0 and avg[o] - rates[o, n] / n_slots < r_min - REPAIR_TOL:
                continue
            candidate = out.copy()
            candidate[:, n] = 0.0
            candidate[k, n] = 1.0
            if loss - rates[k, n] < best_loss and caps_hold(out, candidate):
                best, best_loss = candidate, loss - rates[k, n]
        if best is None:
            log.debug(f"schedule repair: user {k + 1} stays {gaps[k]:.3g} below r_min")
            break
        out = best
    return out


def integer_schedule(
    rates: np.ndarray,
    r_min: float,
    coupling: tuple[tuple[np.ndarray, float], ...] = (),
) -> np.ndarray | None:
    """Best binary schedule by mixed-integer programming; None when none meets ``r_min``."""
    rates = np.asarray(rates, dtype=float)
    num_users, n_slots = rates.shape
    size = num_users * n_slots
    slot_rows = np.kron(np.ones(num_users), np.eye(n_slots))
    user_rows = np.kron(np.eye(num_users), np.ones(n_slots)) * rates.ravel() / n_slots
    constraints = [
        optimize.LinearConstraint(slot_rows, -np.inf, 1.0),
        optimize.LinearConstraint(user_rows, r_min, np.inf),
    ]
    for weights, cap in coupling:
        constraints.append(optimize.LinearConstraint(np.asarray(weights, dtype=float).reshape(1, size), -np.inf, cap))
    res = optimize.milp(
        -rates.ravel() / n_slots, integrality=np.ones(size), bounds=optimize.Bounds(0.0, 1.0), constraints=constraints,
    )
    if res.status != 0 or res.x is None:
        log.debug(f"integer schedule: {res.message}")
        return None
    return np.round(res.x).reshape(num_users, n_slots)


# --- P1.2: powers ---

def power_lb_terms(p_k, p_j, p_k_m, p_j_m, gains: LinkGains, noise: float):
    """Power surrogate and its partials (value, d/dp_k, d/dp_j), broadcasting over pairs."""
    p_k, p_j = np.asarray(p_k, dtype=float), np.asarray(p_j, dtype=float)
    leak = p_j_m * gains.je + p_k_m * gains.se
    mixed = noise + leak
    value = (
        np.log1p(p_k * gains.sd / noise)
        + np.log1p(p_j * gains.je / noise) - np.log1p(leak / noise)
        - (gains.je * (p_j - p_j_m) + gains.se * (p_k - p_k_m)) / mixed
    ) / LN2
    d_user = (gains.sd / (noise + p_k * gains.sd) - gains.se / mixed) / LN2
    d_jam = (gains.je / (noise + p_j * gains.je) - gains.je / mixed) / LN2
    return value, d_user, d_jam


def power_lb_rate(p_k, p_j, expansion: tuple, gains: LinkGains, noise: float):
    """Concave lower bound of the unclamped secrecy rate in (p_k, p_j), tight at ``expansion``."""
    p_k_m, p_j_m = expansion
    return power_lb_terms(p_k, p_j, p_k_m, p_j_m, gains, noise)[0]


def build_power_program(
    state: SolutionState,
    scenario: ScenarioConfig,
    expansion: ExpansionPoint | None = None,
    *,
    free_user_power: bool = True,
    free_jam_power: bool = True,
) -> BlockProgram:
    free_jam_power = free_jam_power and scenario.p_j_max > 0
    if not (free_user_power or free_jam_power):
        raise ValueError("power program needs a free power block")
    expansion = expansion or ExpansionPoint.from_state(state)
    theta = state.schedule
    num_users, n_slots = theta.shape
    gains = slot_gains(state, scenario)
    noise = scenario.noise_power

    ks, ns = np.nonzero(theta > SCHEDULED)
    weights = theta[ks, ns] / n_slots
    pair_gains = LinkGains(gains.sd[ks, ns], gains.se[ns], gains.je[ns])
    p_m, pj_m = expansion.user_power[ks, ns], expansion.jam_power[ns]

    layout = VariableLayout()
    if free_user_power:
        layout.add("p", (len(ks),))
    if free_jam_power:
        layout.add("pj", (n_slots,))
    layout.add("eta", (num_users,))

    def powers(x):
        p = layout.view(x, "p") if free_user_power else state.user_power[ks, ns]
        pj = layout.view(x, "pj") if free_jam_power else state.jam_power
        return p, pj

    def terms(x):
        p, pj = powers(x)
        value, d_user, d_jam = power_lb_terms(p, pj[ns], p_m, pj_m, pair_gains, noise)
        partials = []
        if free_user_power:
            partials.append((layout.indices("p"), d_user))
        if free_jam_power:
            partials.append((layout.indices("pj")[ns], d_jam))
        return value, partials

    leak_m = pj_m * pair_gains.je + p_m * pair_gains.se
    mixed = noise + leak_m

    def conic_terms(x):
        p = x[layout.indices("p")] if free_user_power else state.user_power[ks, ns]
        pj = x[layout.indices("pj")[ns]] if free_jam_power else state.jam_power[ns]
        return (
            cp.log1p(cp.multiply(pair_gains.sd / noise, p))
            + cp.log1p(cp.multiply(pair_gains.je / noise, pj))
            - np.log1p(leak_m / noise)
            - cp.multiply(pair_gains.je / mixed, pj - pj_m)
            - cp.multiply(pair_gains.se / mixed, p - p_m)
        ) / LN2

    def surrogate(x):
        return _per_user(ks, weights * terms(x)[0], num_users)

    # Affine rows: average powers and PU interference, split into free and fixed parts.
    rows, rhs = [], []
    other = theta * state.user_power
    if free_user_power:
        other[ks, ns] = 0.0
        row = layout.pack(p=theta[ks, ns] / (n_slots * scenario.p_s_ave))
        rows.append(row)
        rhs.append(1.0 - float(np.sum(other)) / (n_slots * scenario.p_s_ave))
    if free_jam_power:
        cap = scenario.p_j_ave if scenario.p_j_ave > 0 else scenario.p_j_max
        rows.append(layout.pack(pj=1.0 / (n_slots * cap)))
        rhs.append(scenario.p_j_ave / cap)
    for r, threshold in enumerate(scenario.interference_threshold):
        fixed = float(np.sum(other * gains.su[r])) / n_slots
        parts = {}
        if free_user_power:
            parts["p"] = theta[ks, ns] * gains.su[r, ns] / (n_slots * threshold)
        if free_jam_power:
            parts["pj"] = gains.ju[r] / (n_slots * threshold)
        else:
            fixed += float(np.mean(state.jam_power * gains.ju[r]))
        rows.append(layout.pack(**parts))
        rhs.append(1.0 - fixed / threshold)

    lower_parts, upper_parts, start_parts = {"eta": scenario.r_min}, {}, {}
    if free_user_power:
        lower_parts["p"], upper_parts["p"] = 0.0, scenario.p_s_max
        start_parts["p"] = np.clip(state.user_power[ks, ns], 0.0, scenario.p_s_max)
    if free_jam_power:
        lower_parts["pj"], upper_parts["pj"] = 0.0, scenario.p_j_max
        start_parts["pj"] = np.clip(state.jam_power, 0.0, scenario.p_j_max)
    lower, upper = _bounds(layout, lower_parts, upper_parts)
    start = layout.pack(**start_parts)
    start[layout.indices("eta")] = surrogate(start)
    # Powers in watts sit orders of magnitude below η; solve them in units of their largest start value.
    scale_parts = {
        name: max(float(np.max(value, initial=0.0)), POWER_UNIT_FLOOR * cap) or 1.0
        for name, value, cap in (
            ("p", start_parts.get("p"), scenario.p_s_max),
            ("pj", start_parts.get("pj"), scenario.p_j_max),
        )
        if name in start_parts
    }

    def applier(x, current):
        p, pj = powers(x)
        user_power = np.array(current.user_power)
        user_power[ks, ns] = np.clip(p, 0.0, scenario.p_s_max)
        return current.replace(user_power=user_power, jam_power=np.clip(pj, 0.0, scenario.p_j_max))

    cost = layout.pack(eta=1.0)
    return BlockProgram(
        dim=layout.dim, objective=linear_objective(cost), start=start, lower=lower, upper=upper,
        ineq_matrix=np.array(rows).reshape(-1, layout.dim), ineq_vector=np.array(rhs),
        convex_ineq=(_rate_block(layout, ks, weights, num_users, terms, conic_terms),),
        linear_cost=cost, scale=layout.pack(1.0, **scale_parts), name="P1.2",
        layout=layout, surrogate=surrogate, applier=applier,
    )


# --- P1.3: source trajectory ---

def s_rate_bound_coeffs(q_s_m, w_dk, c_n, alt_s: float, ref_gain: float):
    """(D, L) with log2(1 + cρ₀/(d + H²)) ≥ D + L·(d − d_m) for every squared distance d ≥ 0."""
    diff = np.asarray(q_s_m, dtype=float) - np.asarray(w_dk, dtype=float)
    u = np.sum(diff * diff, axis=-1) + alt_s * alt_s
    gain = np.asarray(c_n, dtype=float) * ref_gain
    return np.log1p(gain / u) / LN2, -gain / (LN2 * (u + gain) * u)


def build_s_trajectory_program(
    state: SolutionState,
    scenario: ScenarioConfig,
    expansion: ExpansionPoint | None = None,
) -> BlockProgram:
    expansion = expansion or ExpansionPoint.from_state(state)
    theta = state.schedule
    num_users, n_slots = theta.shape
    users = np.asarray(scenario.user_positions, dtype=float)
    pus = np.asarray(scenario.pu_positions, dtype=float).reshape(-1, 2)
    eve = np.asarray(scenario.eve_center, dtype=float)
    r_e, rho0, noise = scenario.eve_radius, scenario.ref_gain, scenario.noise_power
    h1_sq = scenario.alt_s ** 2
    q_m = np.asarray(expansion.traj_s, dtype=float)

    h_je = worst_case_gain_je(state.traj_j, eve, r_e, scenario.alt_j, rho0)
    ks, ns = np.nonzero(theta > 0)
    weights = theta[ks, ns] / n_slots
    p = state.user_power[ks, ns]
    d_coef, l_coef = s_rate_bound_coeffs(q_m[ns], users[ks], p / noise, scenario.alt_s, rho0)
    d_m = np.sum((q_m[ns] - users[ks]) ** 2, axis=1)
    leak = p / (state.jam_power[ns] * h_je[ns] + noise) * rho0

    layout = VariableLayout()
    layout.add("q", (n_slots, 2))
    layout.add("eta", (num_users,))
    layout.add("d_se", (n_slots,))
    layout.add("d_su", (len(pus), n_slots))
    q_idx, dse_idx = layout.indices("q"), layout.indices("d_se")

    def terms(x):
        diff = x[q_idx[ns]] - users[ks]
        user = d_coef + l_coef * (np.sum(diff * diff, axis=1) - d_m)
        u = x[dse_idx[ns]] + h1_sq
        eve_term = -np.log1p(leak / u) / LN2
        d_eve = leak / (u * (u + leak)) / LN2
        partials = [
            (q_idx[ns, 0], 2 * l_coef * diff[:, 0]),
            (q_idx[ns, 1], 2 * l_coef * diff[:, 1]),
            (dse_idx[ns], d_eve),
        ]
        return user + eve_term, partials

    leaky = (leak > 0).astype(float)
    log_leak = np.log(np.where(leak > 0, leak, 1.0))

    def conic_terms(x):
        sq = sum(cp.square(x[q_idx[ns, c]] - users[ks, c]) for c in range(2))
        user = d_coef + cp.multiply(l_coef, sq - d_m)
        # log1p(leak / u) == logistic(log(leak) - log(u))
        eve_term = cp.multiply(leaky, cp.logistic(log_leak - cp.log(x[dse_idx[ns]] + h1_sq)))
        return user - eve_term / LN2

    def surrogate(x):
        return _per_user(ks, weights * terms(x)[0], num_users)

    # Eavesdropper slack: d_se ≤ tangent of (max(‖q − ŵ‖ − r, 0))² at q_m.
    x_m = q_m - eve
    dist = np.linalg.norm(x_m, axis=1)
    gap = np.maximum(dist - r_e, 0.0)
    factor = np.divide(gap, dist, out=np.zeros_like(gap), where=dist > 0)
    scale = 1.0 / np.maximum(1.0, gap * gap)
    slots = np.arange(n_slots)
    eve_rows = np.zeros((n_slots, layout.dim))
    eve_rows[slots, dse_idx] = scale
    for c in range(2):
        eve_rows[slots, q_idx[:, c]] = -2 * factor * x_m[:, c] * scale
    eve_rhs = (gap * gap - 2 * factor * np.sum(x_m * q_m, axis=1)) * scale
    rows, rhs = [eve_rows], [eve_rhs]

    if r_e > 0:
        # Half-plane r ≤ uᵀ(q − ŵ) keeps S outside the disc.
        unit = x_m / dist[:, None]
        disc_rows = np.zeros((n_slots, layout.dim))
        for c in range(2):
            disc_rows[slots, q_idx[:, c]] = -unit[:, c]
        rows.append(disc_rows)
        rhs.append(-r_e - unit @ eve)

    su_rows, su_rhs = _tangent_rows(layout, "d_su", "q", q_m, pus)
    rows.append(su_rows)
    rhs.append(su_rhs)

    gains_ju = np.array([los_gain(state.traj_j, w, scenario.alt_j, rho0) for w in pus]).reshape(len(pus), n_slots)
    blocks = [
        _rate_block(layout, ks, weights, num_users, terms, conic_terms),
        _interference_block(
            layout, "d_su", np.sum(theta * state.user_power, axis=0),
            np.mean(state.jam_power * gains_ju, axis=1), scenario.alt_s, scenario,
        ),
        _speed_block(layout, "q", scenario.slot_len * scenario.v_max_s),
    ]
    eq_matrix, eq_vector = _endpoint_rows(layout, "q", scenario.start_s, scenario.end_s)

    lower, upper = _bounds(layout, {"eta": scenario.r_min, "d_se": 0.0, "d_su": 0.0}, {})
    y = q_m[None, :, :] - pus[:, None, :]
    start = layout.pack(q=q_m, d_se=gap * gap, d_su=np.sum(y * y, axis=2))
    start[layout.indices("eta")] = surrogate(start)
    var_scale = layout.pack(1.0, d_se=np.maximum(1.0, gap * gap), d_su=np.maximum(1.0, np.sum(y * y, axis=2)))

    def applier(x, current):
        traj = _pinned(layout.view(x, "q"), scenario.start_s, scenario.end_s)
        return current.replace(traj_s=traj)

    cost = layout.pack(eta=1.0)
    return BlockProgram(
        dim=layout.dim, objective=linear_objective(cost), start=start, lower=lower, upper=upper,
        eq_matrix=eq_matrix, eq_vector=eq_vector,
        ineq_matrix=np.vstack(rows), ineq_vector=np.concatenate(rhs),
        convex_ineq=tuple(b for b in blocks if b is not None),
        linear_cost=cost, scale=var_scale, name="P1.3",
        layout=layout, surrogate=surrogate, applier=applier,
    )


# --- P1.4: jammer trajectory ---

def j_rate_bound_terms(q_j_m, eve_center, r_e: float, p_j, alt_j: float, ref_gain: float, noise: float):
    """(M, N) of the tangent of log2(1 + P_J ρ₀ / (σ²(D + H₂²))) in D = (‖q_J − ŵ‖ + r)²."""
    dist = np.linalg.norm(np.asarray(q_j_m, dtype=float) - np.asarray(eve_center, dtype=float), axis=-1)
    u = (dist + r_e) ** 2 + alt_j * alt_j
    received = np.asarray(p_j, dtype=float) * ref_gain / u
    return 1.0 / (LN2 * (received + noise)), np.log1p(received / noise) / LN2


def j_composite_slope(q_j_m, eve_center, r_e: float, p_j, alt_j: float, ref_gain: float, noise: float):
    """Derivative of the jammer term with respect to D at the expansion; never positive."""
    m_coef, _ = j_rate_bound_terms(q_j_m, eve_center, r_e, p_j, alt_j, ref_gain, noise)
    dist = np.linalg.norm(np.asarray(q_j_m, dtype=float) - np.asarray(eve_center, dtype=float), axis=-1)
    u = (dist + r_e) ** 2 + alt_j * alt_j
    return -m_coef * np.asarray(p_j, dtype=float) * ref_gain / (u * u)


def build_j_trajectory_program(
    state: SolutionState,
    scenario: ScenarioConfig,
    expansion: ExpansionPoint | None = None,
) -> BlockProgram:
    expansion = expansion or ExpansionPoint.from_state(state)
    theta = state.schedule
    num_users, n_slots = theta.shape
    users = np.asarray(scenario.user_positions, dtype=float)
    pus = np.asarray(scenario.pu_positions, dtype=float).reshape(-1, 2)
    eve = np.asarray(scenario.eve_center, dtype=float)
    r_e, rho0, noise = scenario.eve_radius, scenario.ref_gain, scenario.noise_power
    h2_sq = scenario.alt_j ** 2
    q_m = np.asarray(expansion.traj_j, dtype=float)
    pj = np.asarray(state.jam_power, dtype=float)
    jam_rx = pj * rho0

    h_se = worst_case_gain_se(state.traj_s, eve, r_e, scenario.alt_s, rho0)
    ks, ns = np.nonzero(theta > 0)
    weights = theta[ks, ns] / n_slots
    p = state.user_power[ks, ns]
    h_sd = np.array([los_gain(state.traj_s[n], users[k], scenario.alt_s, rho0) for k, n in zip(ks, ns)])
    legit = np.log1p(p * h_sd / noise) / LN2
    leak = p * h_se[ns] / noise

    x_m = q_m - eve
    dist = np.linalg.norm(x_m, axis=1)
    d_exp = (dist + r_e) ** 2
    _, n_coef = j_rate_bound_terms(q_m, eve, r_e, pj, scenario.alt_j, rho0, noise)
    slope = j_composite_slope(q_m, eve, r_e, pj, scenario.alt_j, rho0, noise)

    layout = VariableLayout()
    layout.add("q", (n_slots, 2))
    layout.add("eta", (num_users,))
    layout.add("d_ju", (len(pus), n_slots))
    layout.add("d_je", (n_slots,))
    layout.add("rho", (n_slots,))
    q_idx, dje_idx, rho_idx = layout.indices("q"), layout.indices("d_je"), layout.indices("rho")

    def terms(x):
        u = x[dje_idx[ns]] + h2_sq
        z = 1.0 + jam_rx[ns] / (noise * u) + leak
        middle = -np.log(z) / LN2
        d_middle = jam_rx[ns] / (LN2 * noise * u * u * z)
        reach = x[rho_idx[ns]] + r_e
        third = n_coef[ns] + slope[ns] * (reach * reach - d_exp[ns])
        partials = [(dje_idx[ns], d_middle), (rho_idx[ns], 2 * slope[ns] * reach)]
        return legit + middle + third, partials

    # -log(c + b/u) == -log(c) - logistic(log(b/c) - log(u)) with c = 1 + leak, b = jamming SNR numerator
    base = 1.0 + leak
    jammed = (jam_rx[ns] > 0).astype(float)
    log_ratio = np.log(np.where(jam_rx[ns] > 0, jam_rx[ns] / noise, 1.0) / base)

    def conic_terms(x):
        masked = cp.multiply(jammed, cp.logistic(log_ratio - cp.log(x[dje_idx[ns]] + h2_sq)))
        middle = -(np.log(base) + masked) / LN2
        third = n_coef[ns] + cp.multiply(slope[ns], cp.square(x[rho_idx[ns]] + r_e) - d_exp[ns])
        return legit + middle + third

    def surrogate(x):
        return _per_user(ks, weights * terms(x)[0], num_users)

    # Rows are in units of the expansion distance.
    radius_scale = 1.0 / np.maximum(1.0, dist)

    def radius_fun(x):
        diff = x[q_idx] - eve
        rho = x[rho_idx]
        sq = np.sum(diff * diff, axis=1)
        jac = np.zeros((n_slots, layout.dim))
        slots_ = np.arange(n_slots)
        for c in range(2):
            jac[slots_, q_idx[:, c]] = 2 * diff[:, c] / rho
        jac[slots_, rho_idx] = -sq / (rho * rho) - 1.0
        return (sq / rho - rho) * radius_scale, jac * radius_scale[:, None]

    def radius_conic(x):
        offset = cp.vstack([x[q_idx[:, c]] - eve[c] for c in range(2)])
        return [cp.norm(offset, 2, axis=0) <= x[rho_idx]]

    # Jammer-to-eve slack: d_je ≤ tangent of (‖q − ŵ‖ + r)² at q_m.
    slots = np.arange(n_slots)
    unit = np.divide(x_m, dist[:, None], out=np.zeros_like(x_m), where=dist[:, None] > 0)
    slope_q = 2 * (dist + r_e)
    scale = 1.0 / np.maximum(1.0, d_exp)
    je_rows = np.zeros((n_slots, layout.dim))
    je_rows[slots, dje_idx] = scale
    for c in range(2):
        je_rows[slots, q_idx[:, c]] = -slope_q * unit[:, c] * scale
    je_rhs = (d_exp - slope_q * np.sum(unit * q_m, axis=1)) * scale
    ju_rows, ju_rhs = _tangent_rows(layout, "d_ju", "q", q_m, pus)

    gains_su = np.array([los_gain(state.traj_s, w, scenario.alt_s, rho0) for w in pus]).reshape(len(pus), n_slots)
    user_tx = np.sum(theta * state.user_power, axis=0)
    blocks = [
        _rate_block(layout, ks, weights, num_users, terms, conic_terms),
        _interference_block(layout, "d_ju", pj, np.mean(user_tx * gains_su, axis=1), scenario.alt_j, scenario),
        ConstraintBlock(radius_fun, n_slots, "radius", radius_conic),
        _speed_block(layout, "q", scenario.slot_len * scenario.v_max_j),
    ]
    eq_matrix, eq_vector = _endpoint_rows(layout, "q", scenario.start_j, scenario.end_j)

    lower, upper = _bounds(
        layout, {"eta": scenario.r_min, "d_ju": 0.0, "d_je": r_e * r_e, "rho": RHO_MIN}, {},
    )
    y = q_m[None, :, :] - pus[:, None, :]
    start = layout.pack(q=q_m, d_ju=np.sum(y * y, axis=2), d_je=d_exp, rho=np.maximum(dist, RHO_MIN))
    start[layout.indices("eta")] = surrogate(start)
    var_scale = layout.pack(
        1.0, d_ju=np.maximum(1.0, np.sum(y * y, axis=2)), d_je=np.maximum(1.0, d_exp), rho=np.maximum(1.0, dist),
    )

    def applier(x, current):
        traj = _pinned(layout.view(x, "q"), scenario.start_j, scenario.end_j)
        return current.replace(traj_j=traj)

    cost = layout.pack(eta=1.0)
    return BlockProgram(
        dim=layout.dim, objective=linear_objective(cost), start=start, lower=lower, upper=upper,
        eq_matrix=eq_matrix, eq_vector=eq_vector,
        ineq_matrix=np.vstack([je_rows, ju_rows]), ineq_vector=np.concatenate([je_rhs, ju_rhs]),
        convex_ineq=tuple(b for b in blocks if b is not None),
        linear_cost=cost, scale=var_scale, name="P1.4",
        layout=layout, surrogate=surrogate, applier=applier,
    )
