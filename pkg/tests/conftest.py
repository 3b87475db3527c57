import numpy as np
import pytest

from skyjam.rates import SolutionState
from skyjam.scenario import default_paper_scenario


@pytest.fixture
def paper_scenario():
    return default_paper_scenario()


@pytest.fixture
def small_scenario():
    """Four slots, two symmetric users, one far PU and a far eavesdropper."""
    return default_paper_scenario(
        period=4.0,
        user_positions=((-20.0, 0.0), (20.0, 0.0)),
        pu_positions=((0.0, 40.0),),
        eve_center=(0.0, -60.0),
        eve_radius=5.0,
        interference_threshold=1e-6,
    )


@pytest.fixture
def one_slot_scenario():
    return default_paper_scenario(
        period=1.0,
        user_positions=((0.0, 0.0),),
        pu_positions=((60.0, 0.0),),
        eve_center=(30.0, 0.0),
        eve_radius=0.0,
        start_s=(0.0, 0.0),
        start_j=(30.0, 5.0),
        interference_threshold=1e-6,
    )


@pytest.fixture
def one_slot_state():
    return SolutionState(
        schedule=np.ones((1, 1)),
        user_power=np.full((1, 1), 0.1),
        jam_power=np.full(1, 0.1),
        traj_s=np.zeros((1, 2)),
        traj_j=np.array([[30.0, 5.0]]),
    )
