import numpy as np
import pytest

from skyjam.optimizer import init_solution
from skyjam.oracle import (
    GridSpec,
    SlotInstance,
    exhaustive_schedule_oracle,
    fd_gradient_check,
    grid_power_oracle,
    monte_carlo_eve_check,
    power_fixed_point,
    slot_instance,
)
from skyjam.rates import SolutionState, objective
from skyjam.scenario import default_paper_scenario


def _instance(gain_se, gain_je):
    return SlotInstance(
        gain_sd=1e-6, gain_se=gain_se, gain_je=gain_je,
        gain_su=np.zeros(0), gain_ju=np.zeros(0), thresholds=np.zeros(0),
        noise=1e-12, p_cap=0.1, p_j_cap=0.1,
    )


def test_fd_check_is_exact_on_quadratics():
    f = lambda x: (float(x @ x), 2 * x)  # noqa: E731
    for x in np.random.default_rng(4).normal(size=(5, 3)):
        assert fd_gradient_check(f, x) <= 1e-9


def test_fd_check_catches_wrong_gradient():
    f = lambda x: (float(x @ x), 3 * x)  # noqa: E731
    assert fd_gradient_check(f, np.array([1.0, -2.0])) > 0.1


def test_exhaustive_toy():
    value, schedule = exhaustive_schedule_oracle(np.array([[3.0, 1.0], [2.0, 2.0]]), 0.5)
    assert value == pytest.approx(2.5)
    np.testing.assert_array_equal(schedule, [[1, 0], [0, 1]])


def test_exhaustive_negative_rates_picks_empty_schedule():
    value, schedule = exhaustive_schedule_oracle(-np.ones((2, 2)), 0.0)
    assert value == 0.0
    np.testing.assert_array_equal(schedule, np.zeros((2, 2)))


def test_exhaustive_single_choice():
    value, _ = exhaustive_schedule_oracle(np.array([[2.0]]), 0.0)
    assert value == 2.0


def test_exhaustive_reports_infeasible_r_min():
    assert exhaustive_schedule_oracle(np.array([[1.0]]), 5.0) == (-np.inf, None)


def test_exhaustive_respects_power_caps():
    value, schedule = exhaustive_schedule_oracle(np.array([[3.0, 3.0]]), 0.0, power_caps=[(np.ones((1, 2)), 1.0)])
    assert value == pytest.approx(1.5)
    assert schedule.sum() == 1.0


def test_grid_without_leakage_uses_full_power():
    p, _, _ = grid_power_oracle(_instance(gain_se=0.0, gain_je=1e-6))
    assert p == pytest.approx(0.1)


def test_grid_without_jamming_gain_keeps_jammer_off():
    _, pj, _ = grid_power_oracle(_instance(gain_se=5e-7, gain_je=0.0))
    assert pj == 0.0


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 1)
    with pytest.raises(ValueError):
        GridSpec(1.0, 0.0, 5)


def test_fixed_point_reaches_grid_optimum(one_slot_scenario, one_slot_state):
    start = one_slot_state.replace(
        user_power=one_slot_state.user_power * 0.2, jam_power=one_slot_state.jam_power * 0.3,
    )
    _, _, best = grid_power_oracle(slot_instance(start, one_slot_scenario), count=200)
    solved = power_fixed_point(start, one_slot_scenario)
    assert objective(solved, one_slot_scenario) >= best - 1e-3


def _random_slot(rng):
    user, pu, eve, start_s, start_j = rng.uniform(-50.0, 50.0, (5, 2))
    scenario = default_paper_scenario(
        period=1.0, user_positions=(tuple(user),), pu_positions=(tuple(pu),),
        eve_center=tuple(eve), eve_radius=0.0, start_s=tuple(start_s), start_j=tuple(start_j),
        interference_threshold=1e-6, r_min=0.0,
    )
    state = SolutionState(
        schedule=np.ones((1, 1)),
        user_power=np.full((1, 1), 0.02),
        jam_power=np.full(1, 0.03),
        traj_s=start_s[None, :],
        traj_j=start_j[None, :],
    )
    return scenario, state


def test_fixed_point_reaches_grid_optimum_on_random_slots():
    rng = np.random.default_rng(17)
    for _ in range(20):
        scenario, state = _random_slot(rng)
        _, _, best = grid_power_oracle(slot_instance(state, scenario), count=200)
        solved = power_fixed_point(state, scenario)
        assert objective(solved, scenario) >= best - 1e-3


def test_fixed_point_does_not_lose_objective(one_slot_scenario, one_slot_state):
    solved = power_fixed_point(one_slot_state, one_slot_scenario)
    assert objective(solved, one_slot_scenario) >= objective(one_slot_state, one_slot_scenario) - 1e-9


def test_slot_instance_needs_one_slot(small_scenario):
    with pytest.raises(ValueError, match="one-slot"):
        slot_instance(init_solution(small_scenario), small_scenario)


def test_monte_carlo_without_radius_is_exact(one_slot_scenario, one_slot_state):
    assert monte_carlo_eve_check(one_slot_state, one_slot_scenario, 500, seed=1) == 0.0


def test_monte_carlo_bound_is_sound(small_scenario):
    state = init_solution(small_scenario)
    assert monte_carlo_eve_check(state, small_scenario, 10_000, seed=42) >= -1e-12


def test_monte_carlo_needs_samples(small_scenario):
    with pytest.raises(ValueError):
        monte_carlo_eve_check(init_solution(small_scenario), small_scenario, 0, seed=1)


def test_bound_value_shrinks_with_radius(small_scenario):
    state = init_solution(small_scenario)
    values = [
        objective(state, small_scenario.model_copy(update={"eve_radius": r}))
        for r in (0.0, 10.0, 20.0, 30.0)
    ]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] < values[0]
