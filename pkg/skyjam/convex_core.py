"""Concave maximization over convex sets and linear programs.

Programs whose constraint blocks all carry a disciplined convex form are
handed to cvxpy; the rest go to SLSQP and linear programs to HiGHS. Every
solve runs in scaled variables x = scale · z and is certified after the fact:
``check_kkt`` measures the worst constraint violation and the Lagrangian
residual with nonnegative multipliers fitted by least squares over the
active set.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum
from typing import NamedTuple

import cvxpy as cp
import numpy as np
from scipy import optimize

from skyjam import config

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
USABLE_TOL = 1e-6  # a max_iter point this close to feasible is still returned
ACTIVE_TOL = 1e-7
DUAL_FLOOR = 1e-6  # relative to the largest conic dual
OBJECTIVE_SLACK = 1e-12
SLSQP_FTOL = 1e-12
RESTARTS = 2
CONIC_TOL = 1e-9


class SolveStatus(StrEnum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


class SolverError(RuntimeError):
    def __init__(self, status: SolveStatus, message: str = ""):
        super().__init__(message or f"solver status {status}")
        self.status = status


@dataclass(frozen=True)
class ConstraintBlock:
    """Convex constraints g(x) <= 0 evaluated together: ``fun(x) -> (values (m,), jacobian (m, dim))``.

    ``conic(x)`` optionally restates the same rows as cvxpy constraints on an
    expression ``x``, in row order and with matching total size.
    """

    fun: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]]
    size: int
    name: str = ""
    conic: Callable[[cp.Expression], list[cp.Constraint]] | None = None


@dataclass(frozen=True)
class ConvexProgram:
    """Maximize a concave objective subject to bounds, affine and convex constraints.

    ``objective(x)`` returns ``(value, gradient)``. Affine rows read
    ``eq_matrix @ x == eq_vector`` and ``ineq_matrix @ x <= ineq_vector``.
    A program with ``linear_cost`` and no convex blocks is an LP; one with
    ``linear_cost`` and conic forms on every block goes to cvxpy.
    ``scale`` holds the typical magnitude of each variable.
    """

    dim: int
    objective: Callable[[np.ndarray], tuple[float, np.ndarray]]
    start: np.ndarray
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    eq_matrix: np.ndarray | None = None
    eq_vector: np.ndarray | None = None
    ineq_matrix: np.ndarray | None = None
    ineq_vector: np.ndarray | None = None
    convex_ineq: tuple[ConstraintBlock, ...] = ()
    linear_cost: np.ndarray | None = None
    scale: np.ndarray | None = None
    name: str = "program"

    def __post_init__(self):
        def put(attr, value):
            object.__setattr__(self, attr, value)

        dim = self.dim
        start = np.asarray(self.start, dtype=float).ravel()
        if start.size != dim:
            raise ValueError(f"{self.name}: start has {start.size} entries, expected {dim}")
        put("start", start)
        put("lower", np.full(dim, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float))
        put("upper", np.full(dim, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float))
        for matrix, vector in (("eq_matrix", "eq_vector"), ("ineq_matrix", "ineq_vector")):
            a = getattr(self, matrix)
            if a is None:
                put(matrix, np.zeros((0, dim)))
                put(vector, np.zeros(0))
            else:
                put(matrix, np.asarray(a, dtype=float).reshape(-1, dim))
                put(vector, np.asarray(getattr(self, vector), dtype=float).ravel())
        put("convex_ineq", tuple(self.convex_ineq))
        if self.linear_cost is not None:
            put("linear_cost", np.asarray(self.linear_cost, dtype=float).ravel())
        scale = np.ones(dim) if self.scale is None else np.broadcast_to(np.asarray(self.scale, dtype=float), (dim,)).copy()
        if not np.all(np.isfinite(scale) & (scale > 0)):
            raise ValueError(f"{self.name}: scale must be positive and finite")
        put("scale", scale)

    @property
    def affine_eq(self) -> list[tuple[np.ndarray, float]]:
        return [(row, float(b)) for row, b in zip(self.eq_matrix, self.eq_vector)]

    @property
    def is_linear(self) -> bool:
        return self.linear_cost is not None and not self.convex_ineq

    @property
    def has_conic_form(self) -> bool:
        return (
            self.linear_cost is not None
            and bool(self.convex_ineq)
            and all(block.conic is not None for block in self.convex_ineq)
        )


def linear_objective(c: np.ndarray) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    c = np.asarray(c, dtype=float)
    return lambda x: (float(c @ x), c)


@dataclass(frozen=True)
class SolveReport:
    x_opt: np.ndarray
    value: float
    status: SolveStatus
    kkt_stationarity: float
    kkt_feasibility: float
    iterations: int
    duality_gap: float = float("nan")
    message: str = ""

    def raise_for_status(self) -> None:
        if self.status in (SolveStatus.INFEASIBLE, SolveStatus.UNBOUNDED):
            raise SolverError(self.status, self.message or f"solver status {self.status}")


class ActiveSet(NamedTuple):
    """Extra active constraints for ``check_kkt``: inequality rows (affine first), lower and upper bounds."""

    rows: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


# --- Certificates ---

def _inequalities(program: ConvexProgram, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = [program.ineq_matrix @ x - program.ineq_vector]
    rows = [program.ineq_matrix]
    for block in program.convex_ineq:
        v, j = block.fun(x)
        values.append(np.atleast_1d(np.asarray(v, dtype=float)))
        rows.append(np.asarray(j, dtype=float).reshape(-1, program.dim))
    return np.concatenate(values), np.vstack(rows)


def _feasibility(program: ConvexProgram, x: np.ndarray, ineq_values: np.ndarray | None = None) -> float:
    if ineq_values is None:
        ineq_values, _ = _inequalities(program, x)
    return float(max(
        np.max(program.lower - x, initial=0.0),
        np.max(x - program.upper, initial=0.0),
        np.max(np.abs(program.eq_matrix @ x - program.eq_vector), initial=0.0),
        np.max(ineq_values, initial=0.0),
    ))


def check_kkt(program: ConvexProgram, x: np.ndarray, active: ActiveSet | None = None) -> tuple[float, float]:
    """(stationarity, feasibility) of ``x``; stationarity is the 2-norm Lagrangian residual.

    Constraints within ``ACTIVE_TOL`` of their limit are active, plus any
    flagged in ``active``. Infinite bounds are never active.
    """
    x = np.asarray(x, dtype=float)
    values, jac = _inequalities(program, x)
    feasibility = _feasibility(program, x, values)
    _, grad = program.objective(x)
    grad = np.asarray(grad, dtype=float)

    eye = np.eye(program.dim)
    near_lower = np.isfinite(program.lower) & (
        x - program.lower <= ACTIVE_TOL * np.maximum(1.0, np.abs(program.lower))
    )
    near_upper = np.isfinite(program.upper) & (
        program.upper - x <= ACTIVE_TOL * np.maximum(1.0, np.abs(program.upper))
    )
    near_rows = values >= -ACTIVE_TOL
    if active is not None:
        near_rows |= active.rows
        near_lower |= active.lower & np.isfinite(program.lower)
        near_upper |= active.upper & np.isfinite(program.upper)
    columns = [
        jac[near_rows].T,
        -eye[:, near_lower],
        eye[:, near_upper],
        program.eq_matrix.T,
        -program.eq_matrix.T,
    ]
    basis = np.hstack(columns)
    if basis.shape[1] == 0:
        return float(np.linalg.norm(grad)), feasibility
    _, residual = optimize.nnls(basis, grad, maxiter=max(100, 30 * basis.shape[1]))
    return float(residual), feasibility


def check_convexity(program: ConvexProgram, rng: np.random.Generator, pairs: int = 20, scale: float = 1e-2) -> float:
    """Worst midpoint violation of objective concavity and constraint convexity near ``start``.

    Positive values mean the property failed by that much.
    """
    spread = scale * np.maximum(1.0, np.abs(program.start))
    worst = -np.inf

    def sample():
        x = program.start + spread * rng.standard_normal(program.dim)
        return np.clip(x, program.lower, program.upper)

    for _ in range(pairs):
        x, y = sample(), sample()
        mid = (x + y) / 2
        fx, fy, fm = (program.objective(p)[0] for p in (x, y, mid))
        worst = max(worst, (fx + fy) / 2 - fm)
        for block in program.convex_ineq:
            gx, gy, gm = (np.atleast_1d(block.fun(p)[0]) for p in (x, y, mid))
            worst = max(worst, float(np.max(gm - (gx + gy) / 2, initial=-np.inf)))
    return float(worst)


# --- Scaling ---

def _scaled_fun(fun, s: np.ndarray):
    def evaluate(z):
        values, jac = fun(s * z)
        return values, np.asarray(jac, dtype=float) * s

    return evaluate


def scaled_program(program: ConvexProgram) -> ConvexProgram:
    """The same program in z = x / scale; identity when every scale is one."""
    s = program.scale
    if np.all(s == 1.0):
        return program

    def objective(z):
        value, grad = program.objective(s * z)
        return value, np.asarray(grad, dtype=float) * s

    return ConvexProgram(
        dim=program.dim,
        objective=objective,
        start=program.start / s,
        lower=program.lower / s,
        upper=program.upper / s,
        eq_matrix=program.eq_matrix * s,
        eq_vector=program.eq_vector,
        ineq_matrix=program.ineq_matrix * s,
        ineq_vector=program.ineq_vector,
        convex_ineq=tuple(ConstraintBlock(_scaled_fun(b.fun, s), b.size, b.name) for b in program.convex_ineq),
        linear_cost=None if program.linear_cost is None else program.linear_cost * s,
        name=program.name,
    )


def _report(
    scaled: ConvexProgram,
    scale: np.ndarray,
    z: np.ndarray,
    start: np.ndarray,
    f_start: float,
    start_feasible: bool,
    tol: float,
    iterations: int,
    message: str,
    *,
    converged: bool = True,
    active: ActiveSet | None = None,
) -> SolveReport:
    """Classify a candidate; falls back to a feasible start when the candidate is unusable."""
    if np.all(np.isfinite(z)):
        stationarity, feasibility = check_kkt(scaled, z, active)
        value = float(scaled.objective(z)[0])
    else:
        stationarity = feasibility = float("inf")
        value = -float("inf")
    not_worse = value >= f_start - OBJECTIVE_SLACK or not start_feasible

    if converged and feasibility <= FEAS_TOL and stationarity <= tol and not_worse:
        status = SolveStatus.OPTIMAL
    elif feasibility <= USABLE_TOL and not_worse:
        status = SolveStatus.MAX_ITER
    elif start_feasible:
        z, value = start, float(f_start)
        stationarity, feasibility = check_kkt(scaled, z)
        status = SolveStatus.MAX_ITER
    else:
        status = SolveStatus.INFEASIBLE

    if status != SolveStatus.OPTIMAL:
        log.debug(f"{scaled.name}: {status} after {iterations} iterations ({message})")
    return SolveReport(
        x_opt=scale * z, value=value, status=status, kkt_stationarity=stationarity,
        kkt_feasibility=feasibility, iterations=iterations, message=message,
    )


# --- Nonlinear path ---

def _slsqp_constraints(program: ConvexProgram) -> list[dict]:
    constraints = []
    if program.eq_matrix.shape[0]:
        a, b = program.eq_matrix, program.eq_vector
        constraints.append({"type": "eq", "fun": lambda x: a @ x - b, "jac": lambda x: a})
    if program.ineq_matrix.shape[0]:
        g, h = program.ineq_matrix, program.ineq_vector
        constraints.append({"type": "ineq", "fun": lambda x: h - g @ x, "jac": lambda x: -g})
    for block in program.convex_ineq:
        constraints.append(_block_constraint(block))
    return constraints


def _block_constraint(block: ConstraintBlock) -> dict:
    cache: dict = {}

    def evaluate(x):
        key = x.tobytes()
        if cache.get("key") != key:
            cache["key"] = key
            cache["value"] = block.fun(x)
        return cache["value"]

    return {
        "type": "ineq",
        "fun": lambda x: -np.atleast_1d(evaluate(x)[0]),
        "jac": lambda x: -np.asarray(evaluate(x)[1]),
    }


def _solve_slsqp(program: ConvexProgram, tol: float, max_iter: int) -> SolveReport:
    scaled = scaled_program(program)
    start = np.clip(scaled.start, scaled.lower, scaled.upper)
    f_start, _ = scaled.objective(start)
    start_feasible = _feasibility(scaled, start) <= FEAS_TOL
    if not start_feasible:
        log.debug(f"{program.name}: start violates constraints by {_feasibility(scaled, start):.3g}")

    def negated(z):
        value, grad = scaled.objective(z)
        return -value, -np.asarray(grad, dtype=float)

    bounds = optimize.Bounds(scaled.lower, scaled.upper)
    constraints = _slsqp_constraints(scaled)

    z, iterations, message = start, 0, ""
    for _ in range(RESTARTS):
        res = optimize.minimize(
            negated, z, jac=True, method="SLSQP", bounds=bounds, constraints=constraints,
            options={"maxiter": max(1, max_iter - iterations), "ftol": SLSQP_FTOL},
        )
        iterations += int(res.nit)
        message = str(res.message)
        candidate = np.clip(res.x, scaled.lower, scaled.upper)
        if not np.all(np.isfinite(candidate)):
            break
        improved = scaled.objective(candidate)[0] - scaled.objective(z)[0]
        z = candidate
        stationarity, feasibility = check_kkt(scaled, z)
        if stationarity <= tol or feasibility > USABLE_TOL or iterations >= max_iter:
            break
        if abs(improved) <= OBJECTIVE_SLACK * (1 + abs(f_start)) and res.status == 0:
            break

    return _report(scaled, program.scale, z, start, float(f_start), start_feasible, tol, iterations, message)


# --- Conic path ---

def _dual_mask(constraints, size: int) -> np.ndarray:
    """Rows whose conic dual is clearly positive; all False when the duals do not line up."""
    duals = [c.dual_value for c in constraints]
    if any(d is None for d in duals):
        return np.zeros(size, dtype=bool)
    flat = np.abs(np.concatenate([np.atleast_1d(np.asarray(d, dtype=float)).ravel() for d in duals] or [np.zeros(0)]))
    if flat.size != size:
        return np.zeros(size, dtype=bool)
    return flat > DUAL_FLOOR * max(1.0, float(np.max(flat, initial=0.0)))


def _conic_solver_options() -> dict:
    name = config.CONIC_SOLVER
    if name not in cp.installed_solvers():
        return {}
    if name == cp.CLARABEL:
        return {"solver": name, "tol_gap_abs": CONIC_TOL, "tol_gap_rel": CONIC_TOL, "tol_feas": CONIC_TOL}
    return {"solver": name}


def _solve_conic(program: ConvexProgram, tol: float) -> SolveReport | None:
    """Solve through cvxpy; None when the conic solver fails outright."""
    scaled = scaled_program(program)
    start = np.clip(scaled.start, scaled.lower, scaled.upper)
    f_start = float(scaled.objective(start)[0])
    start_feasible = _feasibility(scaled, start) <= FEAS_TOL

    z = cp.Variable(program.dim)
    x = cp.multiply(program.scale, z)
    lo = np.flatnonzero(np.isfinite(scaled.lower))
    hi = np.flatnonzero(np.isfinite(scaled.upper))
    lower_con = [z[lo] >= scaled.lower[lo]] if lo.size else []
    upper_con = [z[hi] <= scaled.upper[hi]] if hi.size else []
    affine_con = [scaled.ineq_matrix @ z <= scaled.ineq_vector] if scaled.ineq_matrix.shape[0] else []
    eq_con = [scaled.eq_matrix @ z == scaled.eq_vector] if scaled.eq_matrix.shape[0] else []
    block_con = [list(block.conic(x)) for block in program.convex_ineq]

    problem = cp.Problem(
        cp.Maximize(scaled.linear_cost @ z),
        lower_con + upper_con + affine_con + eq_con + [c for cons in block_con for c in cons],
    )
    try:
        problem.solve(**_conic_solver_options())
    except cp.error.SolverError as exc:
        log.warning(f"{program.name}: conic solver failed ({exc}), falling back to SLSQP")
        return None

    status = str(problem.status)
    iterations = int(getattr(problem.solver_stats, "num_iters", 0) or 0)
    if z.value is None or status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return _report(
            scaled, program.scale, np.full(program.dim, np.nan), start, f_start, start_feasible,
            tol, iterations, f"conic status {status}", converged=False,
        )

    rows = [_dual_mask(affine_con, scaled.ineq_matrix.shape[0])]
    rows += [_dual_mask(cons, block.size) for cons, block in zip(block_con, program.convex_ineq)]
    lower, upper = np.zeros(program.dim, dtype=bool), np.zeros(program.dim, dtype=bool)
    if lo.size:
        lower[lo] = _dual_mask(lower_con, lo.size)
    if hi.size:
        upper[hi] = _dual_mask(upper_con, hi.size)
    active = ActiveSet(np.concatenate(rows), lower, upper)

    candidate = np.clip(np.asarray(z.value, dtype=float).ravel(), scaled.lower, scaled.upper)
    return _report(
        scaled, program.scale, candidate, start, f_start, start_feasible, tol, iterations,
        f"conic status {status}", converged=status == cp.OPTIMAL, active=active,
    )


def solve(
    program: ConvexProgram,
    tol: float = config.SOLVER_TOL,
    max_iter: int = config.SOLVER_MAX_ITER,
) -> SolveReport:
    """Maximize ``program``. The report's stationarity is measured in the scaled variables."""
    if program.is_linear:
        return solve_program(program)
    if program.has_conic_form:
        report = _solve_conic(program, tol)
        if report is not None:
            return report
    return _solve_slsqp(program, tol, max_iter)


# --- Linear path ---

_LINPROG_STATUS = {
    0: SolveStatus.OPTIMAL,
    1: SolveStatus.MAX_ITER,
    2: SolveStatus.INFEASIBLE,
    3: SolveStatus.UNBOUNDED,
    4: SolveStatus.MAX_ITER,
}


def solve_lp(
    c: np.ndarray,
    affine_ineq: tuple[np.ndarray, np.ndarray] | None = None,
    affine_eq: tuple[np.ndarray, np.ndarray] | None = None,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> SolveReport:
    """Maximize c @ x; rows read A @ x <= b and A @ x == b, bounds default to free."""
    c = np.asarray(c, dtype=float).ravel()
    dim = c.size
    a_ub, b_ub = (np.zeros((0, dim)), np.zeros(0)) if affine_ineq is None else affine_ineq
    a_eq, b_eq = (np.zeros((0, dim)), np.zeros(0)) if affine_eq is None else affine_eq
    a_ub, b_ub = np.asarray(a_ub, dtype=float).reshape(-1, dim), np.asarray(b_ub, dtype=float).ravel()
    a_eq, b_eq = np.asarray(a_eq, dtype=float).reshape(-1, dim), np.asarray(b_eq, dtype=float).ravel()
    if bounds is None:
        lower, upper = np.full(dim, -np.inf), np.full(dim, np.inf)
    else:
        lower, upper = (np.broadcast_to(np.asarray(b, dtype=float), (dim,)) for b in bounds)

    res = optimize.linprog(
        -c,
        A_ub=a_ub if a_ub.shape[0] else None,
        b_ub=b_ub if a_ub.shape[0] else None,
        A_eq=a_eq if a_eq.shape[0] else None,
        b_eq=b_eq if a_eq.shape[0] else None,
        bounds=[(lo if np.isfinite(lo) else None, hi if np.isfinite(hi) else None) for lo, hi in zip(lower, upper)],
        method="highs",
    )
    status = _LINPROG_STATUS.get(res.status, SolveStatus.MAX_ITER)
    if res.x is None:
        return SolveReport(
            x_opt=np.full(dim, np.nan), value=float("nan"), status=status,
            kkt_stationarity=float("inf"), kkt_feasibility=float("inf"),
            iterations=int(getattr(res, "nit", 0)), message=str(res.message),
        )

    x = res.x
    feasibility = float(max(
        np.max(a_ub @ x - b_ub, initial=0.0),
        np.max(np.abs(a_eq @ x - b_eq), initial=0.0),
        np.max(lower - x, initial=0.0),
        np.max(x - upper, initial=0.0),
    ))

    # HiGHS marginals are the duals of the minimization of -c.
    y_ub = res.ineqlin.marginals if a_ub.shape[0] else np.zeros(0)
    y_eq = res.eqlin.marginals if a_eq.shape[0] else np.zeros(0)
    z_lo, z_hi = res.lower.marginals, res.upper.marginals
    residual = -c - a_ub.T @ y_ub - a_eq.T @ y_eq - z_lo - z_hi
    dual = (
        b_ub @ y_ub + b_eq @ y_eq
        + np.where(np.isfinite(lower), lower, 0.0) @ z_lo
        + np.where(np.isfinite(upper), upper, 0.0) @ z_hi
    )
    return SolveReport(
        x_opt=x, value=float(c @ x), status=status,
        kkt_stationarity=float(np.linalg.norm(residual)), kkt_feasibility=feasibility,
        iterations=int(res.nit), duality_gap=float(abs(res.fun - dual)), message=str(res.message),
    )


def solve_program(program: ConvexProgram, tol: float = config.SOLVER_TOL) -> SolveReport:
    """Dispatch to ``solve_lp`` for linear programs and ``solve`` otherwise."""
    if not program.is_linear:
        return solve(program, tol)
    return solve_lp(
        program.linear_cost,
        (program.ineq_matrix, program.ineq_vector),
        (program.eq_matrix, program.eq_vector),
        (program.lower, program.upper),
    )
