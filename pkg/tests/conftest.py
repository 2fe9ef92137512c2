import numpy as np
import pytest

from sfpsg.game_model import StochasticGame

MATCHING_PENNIES = np.array([[1.0, -1.0], [-1.0, 1.0]])
COORDINATION = np.array([[1.0, 0.0], [0.0, 0.5]])


def controlled_rows(controller_action_rows, controller, shape=(2, 2)):
    """Transition block for one state where only ``controller`` matters."""
    block = np.zeros((*shape, len(controller_action_rows[0])))
    for a in np.ndindex(*shape):
        block[a] = controller_action_rows[a[controller]]
    return block


def make_acceptance_game(discounts=(0.9, 0.8)) -> StochasticGame:
    """Two states: matching pennies controlled by player 0, coordination by player 1."""
    r = np.zeros((2, 2, 2, 2))
    r[0, 0], r[1, 0] = MATCHING_PENNIES, -MATCHING_PENNIES
    r[0, 1] = r[1, 1] = COORDINATION
    p = np.zeros((2, 2, 2, 2))
    p[0] = controlled_rows([[0.8, 0.2], [0.2, 0.8]], controller=0)
    p[1] = controlled_rows([[0.8, 0.2], [0.2, 0.8]], controller=1)
    return StochasticGame(r, p, np.array(discounts), (0, 1))


def single_state_game(r0, r1, gamma=0.0) -> StochasticGame:
    r = np.stack([np.asarray(r0, float), np.asarray(r1, float)])[:, None]
    p = np.ones((1, *r.shape[2:], 1))
    return StochasticGame(r, p, np.array([gamma, gamma]), (0,))


@pytest.fixture
def acceptance_game():
    return make_acceptance_game()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
