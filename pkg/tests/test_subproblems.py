import math

import cvxpy as cp
import numpy as np
import pytest

from skyjam import subproblems
from skyjam.convex_core import SolveStatus, check_convexity, solve_program
from skyjam.optimizer import init_solution
from skyjam.oracle import exhaustive_schedule_oracle, fd_gradient_check
from skyjam.rates import LN2, LinkGains, objective, secrecy_matrix, secrecy_rate_slot
from skyjam.scenario import default_paper_scenario
from skyjam.subproblems import (
    RHO_MIN,
    ExpansionPoint,
    VariableLayout,
    build_j_trajectory_program,
    build_power_program,
    build_s_trajectory_program,
    build_scheduling_lp,
    integer_schedule,
    j_composite_slope,
    j_rate_bound_terms,
    power_lb_rate,
    power_lb_terms,
    repair_schedule,
    round_schedule,
    s_rate_bound_coeffs,
    schedule_coupling,
    schedule_rate_matrix,
    scheduling_lp,
)

USABLE = (SolveStatus.OPTIMAL, SolveStatus.MAX_ITER)
BUILDERS = [build_power_program, build_s_trajectory_program, build_j_trajectory_program]


def _row_check(block, row):
    def f(x):
        values, jac = block.fun(x)
        return float(values[row]), jac[row]
    return f


def _unclamped_user_rates(state, scenario):
    rates = secrecy_matrix(state, scenario, clamp=False)
    return np.sum(state.schedule * rates, axis=1) / state.num_slots


# --- Layout ---

def test_layout_packs_and_views():
    layout = VariableLayout()
    layout.add("q", (3, 2))
    layout.add("eta", (2,))
    x = layout.pack(q=np.arange(6.0).reshape(3, 2), eta=7.0)
    assert layout.dim == 8
    np.testing.assert_array_equal(layout.view(x, "eta"), [7.0, 7.0])
    assert layout.indices("q")[2, 1] == 5
    assert "rho" not in layout


# --- Scheduling ---

def test_scheduling_lp_single_choice():
    program = scheduling_lp(np.array([[2.0]]), 1.0)
    report = solve_program(program)
    assert report.status == SolveStatus.OPTIMAL
    np.testing.assert_allclose(program.layout.view(report.x_opt, "theta"), [[1.0]], atol=1e-9)
    assert report.value == pytest.approx(2.0, abs=1e-8)


def test_scheduling_lp_toy_matches_enumeration():
    rates = np.array([[3.0, 1.0], [2.0, 2.0]])
    report = solve_program(scheduling_lp(rates, 0.5))
    best, schedule = exhaustive_schedule_oracle(rates, 0.5)
    assert report.value == pytest.approx(2.5, abs=1e-8)
    assert best == pytest.approx(2.5)
    np.testing.assert_array_equal(schedule, [[1.0, 0.0], [0.0, 1.0]])


def test_scheduling_lp_negative_rates_schedule_nobody():
    program = scheduling_lp(-np.ones((2, 3)), 0.0)
    report = solve_program(program)
    assert report.value == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(program.layout.view(report.x_opt, "theta"), 0.0, atol=1e-9)


def test_scheduling_lp_unreachable_r_min_is_infeasible():
    report = solve_program(scheduling_lp(np.array([[1.0, 1.0]]), 2.0))
    assert report.status == SolveStatus.INFEASIBLE


def test_scheduling_lp_respects_coupling():
    rates = np.array([[3.0, 3.0]])
    report = solve_program(scheduling_lp(rates, 0.0, coupling=((np.ones((1, 2)), 1.0),)))
    assert report.value == pytest.approx(1.5, abs=1e-8)


def test_build_scheduling_lp_improves_current_schedule(small_scenario):
    state = init_solution(small_scenario)
    program = build_scheduling_lp(state, small_scenario)
    report = solve_program(program)
    assert report.status == SolveStatus.OPTIMAL
    assert report.value >= float(np.sum(_unclamped_user_rates(state, small_scenario))) - 1e-6


@pytest.mark.parametrize(
    ("relaxed", "expected"),
    [
        ([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]),
        ([[0.6], [0.4]], [[1.0], [0.0]]),
        ([[0.5], [0.5]], [[1.0], [0.0]]),
        ([[0.3], [0.2]], [[0.0], [0.0]]),
    ],
)
def test_round_schedule(relaxed, expected):
    np.testing.assert_array_equal(round_schedule(np.array(relaxed)), expected)


def test_round_schedule_drops_nonpositive_rates():
    out = round_schedule(np.array([[0.9, 0.9]]), np.array([[1.0, -0.5]]))
    np.testing.assert_array_equal(out, [[1.0, 0.0]])


RATES_3X3 = np.array([[2.442, 0.945, -0.325], [2.607, 1.627, 0.551], [1.429, 3.447, 3.67]])


def test_repair_restores_r_min_after_rounding():
    # argmax rounding of the relaxed LP leaves user 1 without a slot
    rounded = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    best, expected = exhaustive_schedule_oracle(RATES_3X3, 0.107)
    repaired = repair_schedule(rounded, RATES_3X3, 0.107)
    np.testing.assert_array_equal(repaired, expected)
    assert float(np.sum(repaired * RATES_3X3)) / 3 == pytest.approx(best)


def test_repair_keeps_a_feasible_schedule():
    schedule = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    assert np.array_equal(repair_schedule(schedule, RATES_3X3, 0.107), schedule)
    assert np.array_equal(repair_schedule(np.zeros((3, 3)), RATES_3X3, 0.0), np.zeros((3, 3)))


def test_greedy_repair_when_integer_schedule_fails(monkeypatch):
    monkeypatch.setattr(subproblems, "integer_schedule", lambda *args, **kwargs: None)
    rounded = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    repaired = repair_schedule(rounded, RATES_3X3, 0.107)
    # user 2 cannot give up its only slot, so user 1 takes slot 2 from user 3
    np.testing.assert_array_equal(repaired, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_greedy_repair_respects_coupling(monkeypatch):
    monkeypatch.setattr(subproblems, "integer_schedule", lambda *args, **kwargs: None)
    rounded = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    forbid = np.zeros((3, 3))
    forbid[0, 1] = 1.0
    repaired = repair_schedule(rounded, RATES_3X3, 0.107, coupling=((forbid, 0.0),))
    np.testing.assert_array_equal(repaired, rounded)


def test_integer_schedule_matches_enumeration_with_coupling():
    forbid = np.zeros((3, 3))
    forbid[0, 0] = 1.0
    coupling = ((forbid, 0.0),)
    _, expected = exhaustive_schedule_oracle(RATES_3X3, 0.107, coupling)
    np.testing.assert_array_equal(integer_schedule(RATES_3X3, 0.107, coupling), expected)
    np.testing.assert_array_equal(expected, [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_integer_schedule_reports_infeasible_r_min():
    assert integer_schedule(np.array([[1.0, 1.0]]), 2.0) is None


def _random_schedule_instances(count, seed=2024):
    rng = np.random.default_rng(seed)
    instances = []
    while len(instances) < count:
        num_users = int(rng.integers(2, 4))
        n_slots = int(rng.integers(2, 12 // num_users + 1))
        rates = rng.uniform(-1.0, 4.0, (num_users, n_slots))
        r_min = float(rng.uniform(0.0, 0.5))
        best, schedule = exhaustive_schedule_oracle(rates, r_min)
        if schedule is not None:
            instances.append((rates, r_min, best))
    return instances


def test_rounded_schedules_on_random_instances():
    close = 0
    for rates, r_min, best in _random_schedule_instances(50):
        program = scheduling_lp(rates, r_min)
        report = solve_program(program)
        assert report.status == SolveStatus.OPTIMAL
        assert report.value >= best - 1e-8

        relaxed = program.layout.view(report.x_opt, "theta")
        schedule = repair_schedule(round_schedule(relaxed, rates), rates, r_min)
        per_user = np.sum(schedule * rates, axis=1) / rates.shape[1]
        assert np.all(schedule.sum(axis=0) <= 1.0)
        assert np.all(per_user >= r_min - 1e-9)
        close += bool(per_user.sum() >= best - 0.05 * abs(best))
    assert close >= 45


def test_schedule_coupling_holds_at_current_schedule(paper_scenario):
    state = init_solution(paper_scenario)
    coupling = schedule_coupling(state, paper_scenario)
    assert len(coupling) == 1 + paper_scenario.num_pus
    for weights, cap in coupling:
        assert weights.shape == state.schedule.shape
        assert float(np.sum(weights * state.schedule)) <= cap + 1e-9


# --- Powers ---

def test_power_bound_is_tight_at_expansion():
    gains = LinkGains(sd=2e-6, se=4e-7, je=8e-7)
    at = power_lb_rate(0.1, 0.05, (0.1, 0.05), gains, 1e-12)
    exact = secrecy_rate_slot(0.1, gains, 0.05, 1e-12).unclamped
    assert at == pytest.approx(float(exact), abs=1e-12)


def test_power_bound_dominated_on_grid():
    gains = LinkGains(sd=2e-6, se=4e-7, je=8e-7)
    p, pj = np.meshgrid(np.linspace(0, 0.4, 50), np.linspace(0, 0.4, 50), indexing="ij")
    bound = power_lb_rate(p, pj, (0.1, 0.05), gains, 1e-12)
    exact = secrecy_rate_slot(p, gains, pj, 1e-12).unclamped
    assert np.all(bound <= exact + 1e-12)


def test_power_bound_gradient():
    gains = LinkGains(sd=1e-6, se=3e-7, je=6e-7)
    rng = np.random.default_rng(5)

    def f(x):
        value, d_user, d_jam = power_lb_terms(x[0], x[1], 0.1, 0.05, gains, 1e-8)
        return float(value), np.array([d_user, d_jam])

    for x in rng.uniform(0.02, 0.4, (10, 2)):
        assert fd_gradient_check(f, x) <= 1e-5


def test_power_program_is_tight_at_state(small_scenario):
    state = init_solution(small_scenario)
    program = build_power_program(state, small_scenario)
    np.testing.assert_allclose(program.surrogate_rates(), _unclamped_user_rates(state, small_scenario), atol=1e-9)


def test_power_program_needs_a_free_block(small_scenario):
    state = init_solution(small_scenario)
    with pytest.raises(ValueError, match="free power"):
        build_power_program(state, small_scenario, free_user_power=False, free_jam_power=False)


def test_power_program_without_jammer_budget_fixes_jam_power():
    scenario = default_paper_scenario(
        period=4.0, user_positions=((-20.0, 0.0), (20.0, 0.0)), pu_positions=((0.0, 40.0),),
        eve_center=(0.0, -60.0), eve_radius=5.0, interference_threshold=1e-6, p_j_ave=0.0, p_j_max=0.0,
    )
    program = build_power_program(init_solution(scenario), scenario)
    assert "pj" not in program.layout
    assert "p" in program.layout


# --- Source trajectory ---

def test_s_coefficients_at_zero_power():
    d, slope = s_rate_bound_coeffs((3.0, 4.0), (0.0, 0.0), 0.0, 15.0, 1e-3)
    assert d == 0.0
    assert slope == 0.0


def test_s_coefficients_underestimate():
    q_m, w, c = np.array([12.0, -7.0]), np.array([3.0, 1.0]), 1e8
    d, slope = s_rate_bound_coeffs(q_m, w, c, 15.0, 1e-3)
    d_m = float(np.sum((q_m - w) ** 2))
    assert d == pytest.approx(math.log2(1 + c * 1e-3 / (d_m + 225.0)), rel=1e-12)

    others = np.random.default_rng(2).uniform(0.0, 5000.0, 100)
    exact = np.log2(1 + c * 1e-3 / (others + 225.0))
    assert np.all(d + slope * (others - d_m) <= exact + 1e-12)


def test_s_program_is_tight_at_state(small_scenario):
    state = init_solution(small_scenario)
    program = build_s_trajectory_program(state, small_scenario)
    np.testing.assert_allclose(program.surrogate_rates(), _unclamped_user_rates(state, small_scenario), atol=1e-9)


def test_s_program_pinned_single_slot(one_slot_scenario, one_slot_state):
    program = build_s_trajectory_program(one_slot_state, one_slot_scenario)
    report = solve_program(program)
    assert report.status in USABLE
    np.testing.assert_allclose(program.apply(report.x_opt, one_slot_state).traj_s, one_slot_state.traj_s)


def test_s_program_keeps_slack_tight(small_scenario):
    state = init_solution(small_scenario)
    program = build_s_trajectory_program(state, small_scenario)
    report = solve_program(program)
    assert report.status in USABLE
    slacks = program.slacks(report.x_opt)
    q = program.layout.view(report.x_opt, "q")
    q_m = state.traj_s
    eve = np.asarray(small_scenario.eve_center)
    x_m = q_m - eve
    dist = np.linalg.norm(x_m, axis=1)
    gap = dist - small_scenario.eve_radius
    tangent = gap ** 2 + 2 * (gap / dist) * np.sum(x_m * (q - q_m), axis=1)
    np.testing.assert_allclose(slacks.d_se, tangent, rtol=1e-6, atol=1e-6)


# --- Jammer trajectory ---

def test_j_terms_without_jamming():
    m, n = j_rate_bound_terms((10.0, 0.0), (0.0, 0.0), 5.0, 0.0, 10.0, 1e-3, 1e-12)
    assert n == 0.0
    assert m == pytest.approx(1 / (LN2 * 1e-12))
    assert j_composite_slope((10.0, 0.0), (0.0, 0.0), 5.0, 0.0, 10.0, 1e-3, 1e-12) == 0.0


def test_j_terms_match_direct_evaluation():
    q, eve, r, pj = np.array([22.0, -4.0]), np.array([15.0, -15.0]), 10.0, 0.08
    _, n = j_rate_bound_terms(q, eve, r, pj, 10.0, 1e-3, 1e-12)
    u = (np.linalg.norm(q - eve) + r) ** 2 + 100.0
    assert n == pytest.approx(math.log2(1 + pj * 1e-3 / (1e-12 * u)), rel=1e-12)


def test_j_composite_slope_matches_finite_difference():
    q, eve, r, pj = np.array([22.0, -4.0]), np.array([15.0, -15.0]), 10.0, 0.08
    d_exp = (np.linalg.norm(q - eve) + r) ** 2

    def term(d):
        return math.log2(1 + pj * 1e-3 / (1e-12 * (d + 100.0)))

    h = 1e-6 * d_exp
    numeric = (term(d_exp + h) - term(d_exp - h)) / (2 * h)
    slope = j_composite_slope(q, eve, r, pj, 10.0, 1e-3, 1e-12)
    assert slope == pytest.approx(numeric, rel=1e-5)
    assert slope <= 0


def test_j_program_is_tight_at_state(small_scenario):
    state = init_solution(small_scenario)
    program = build_j_trajectory_program(state, small_scenario)
    np.testing.assert_allclose(program.surrogate_rates(), _unclamped_user_rates(state, small_scenario), atol=1e-9)
    assert np.all(program.slacks(program.start).d_je >= small_scenario.eve_radius ** 2)
    assert np.all(program.layout.view(program.start, "rho") >= RHO_MIN)


def test_j_program_pinned_single_slot(one_slot_scenario, one_slot_state):
    program = build_j_trajectory_program(one_slot_state, one_slot_scenario)
    report = solve_program(program)
    assert report.status in USABLE
    np.testing.assert_allclose(program.apply(report.x_opt, one_slot_state).traj_j, one_slot_state.traj_j)


# --- Shared properties ---

@pytest.mark.parametrize("builder", BUILDERS)
def test_programs_are_convex(builder, small_scenario):
    program = builder(init_solution(small_scenario), small_scenario)
    assert check_convexity(program, np.random.default_rng(1)) <= 1e-9


@pytest.mark.parametrize("builder", BUILDERS)
def test_rate_rows_have_exact_gradients(builder, small_scenario):
    program = builder(init_solution(small_scenario), small_scenario)
    rate = next(b for b in program.convex_ineq if b.name == "rate")
    rng = np.random.default_rng(9)
    for _ in range(10):
        x = program.start * (1 + 0.01 * rng.standard_normal(program.dim))
        x = np.clip(x, program.lower, program.upper)
        for row in range(rate.size):
            assert fd_gradient_check(_row_check(rate, row), x) <= 1e-5


@pytest.mark.parametrize("builder", BUILDERS)
def test_solved_block_does_not_lose_objective(builder, small_scenario):
    state = init_solution(small_scenario)
    program = builder(state, small_scenario)
    report = solve_program(program)
    assert report.status in USABLE
    after = program.apply(report.x_opt, state)
    assert objective(after, small_scenario) >= objective(state, small_scenario) - 1e-5


def test_explicit_expansion_point(small_scenario):
    state = init_solution(small_scenario)
    implicit = build_power_program(state, small_scenario)
    explicit = build_power_program(state, small_scenario, ExpansionPoint.from_state(state))
    np.testing.assert_allclose(implicit.start, explicit.start)


def test_schedule_rates_are_unclamped(small_scenario):
    state = init_solution(small_scenario)
    leaky = state.replace(traj_s=np.tile([0.0, -55.0], (4, 1)), jam_power=np.zeros(4))
    rates = schedule_rate_matrix(leaky, small_scenario)
    assert rates.shape == (2, 4)
    assert np.any(rates < 0)
    np.testing.assert_array_equal(np.maximum(rates, 0.0), secrecy_matrix(leaky, small_scenario))


@pytest.mark.parametrize("builder", BUILDERS)
def test_conic_rows_match_callables(builder, small_scenario):
    program = builder(init_solution(small_scenario), small_scenario)
    rng = np.random.default_rng(3)
    x = np.clip(program.start * (1 + 0.01 * rng.standard_normal(program.dim)), program.lower, program.upper)
    checked = 0
    for block in program.convex_ineq:
        if block.name != "rate" and not block.name.startswith("interference"):
            continue
        (constraint,) = block.conic(cp.Constant(x))
        lhs, rhs = constraint.args
        np.testing.assert_allclose(np.ravel(lhs.value - rhs.value), block.fun(x)[0], rtol=1e-9, atol=1e-9)
        checked += 1
    assert checked >= 1


@pytest.mark.parametrize("builder", BUILDERS)
def test_conic_forms_are_dcp(builder, small_scenario):
    program = builder(init_solution(small_scenario), small_scenario)
    assert program.has_conic_form
    x = cp.Variable(program.dim)
    for block in program.convex_ineq:
        assert all(constraint.is_dcp() for constraint in block.conic(x))


def test_power_program_moves_powers_under_strict_threshold(paper_scenario):
    state = init_solution(paper_scenario)
    program = build_power_program(state, paper_scenario)
    report = solve_program(program)
    assert report.status in USABLE
    after = program.apply(report.x_opt, state)
    assert objective(after, paper_scenario) > objective(state, paper_scenario) + 1e-6
    assert not np.allclose(after.user_power, state.user_power)


# --- Trajectory directions ---

def _corridor(**overrides):
    """Three slots with pinned ends 10 m apart, so only the middle waypoint moves."""
    return default_paper_scenario(
        period=3.0, pu_positions=((500.0, 500.0),), interference_threshold=1e-6, **overrides,
    )


def test_s_moves_toward_scheduled_user():
    # the eavesdropper sits far south, so its term only adds a northward pull
    scenario = _corridor(
        user_positions=((0.0, 30.0),), eve_center=(0.0, -3000.0), eve_radius=0.0,
        start_s=(-5.0, 0.0), end_s=(5.0, 0.0),
    )
    state = init_solution(scenario)
    np.testing.assert_allclose(state.traj_s[1], [0.0, 0.0])
    program = build_s_trajectory_program(state, scenario)
    report = solve_program(program)
    assert report.status in USABLE
    moved = program.apply(report.x_opt, state).traj_s

    # line search from the expansion toward the user, inside the reach of both pinned ends
    reach = math.sqrt(49.0 - 25.0)
    ys = np.linspace(0.0, reach, 2001)
    values = [
        objective(state.replace(traj_s=np.array([[-5.0, 0.0], [0.0, y], [5.0, 0.0]])), scenario) for y in ys
    ]
    best = ys[int(np.argmax(values))]
    assert best == pytest.approx(reach)
    assert moved[1, 0] == pytest.approx(0.0, abs=1e-3)
    assert moved[1, 1] == pytest.approx(best, abs=5e-3)


def test_j_moves_toward_eve_center():
    scenario = _corridor(
        user_positions=((0.0, 40.0),), eve_center=(0.0, -30.0), eve_radius=5.0,
        start_j=(-5.0, 0.0), end_j=(5.0, 0.0),
    )
    state = init_solution(scenario)
    program = build_j_trajectory_program(state, scenario)
    report = solve_program(program)
    assert report.status in USABLE
    solved = program.apply(report.x_opt, state)
    moved = solved.traj_j[1]
    eve = np.asarray(scenario.eve_center)
    assert moved[0] == pytest.approx(0.0, abs=1e-3)
    assert np.linalg.norm(moved - eve) < np.linalg.norm(state.traj_j[1] - eve) - 1.0

    # along the segment from the expansion to the new waypoint the objective never drops
    values = [
        objective(state.replace(traj_j=np.array([[-5.0, 0.0], [0.0, t * moved[1]], [5.0, 0.0]])), scenario)
        for t in np.linspace(0.0, 1.0, 51)
    ]
    assert np.all(np.diff(values) >= -1e-12)
    assert objective(solved, scenario) >= objective(state, scenario)
