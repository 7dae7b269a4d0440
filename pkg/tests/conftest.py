from __future__ import annotations

import numpy as np
import pytest

from linqlsvi.envgen import make_environment, onehot_features
from linqlsvi.mdp import FeatureMap, FiniteMdp

# lines collected by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def hand_mdp() -> FiniteMdp:
    """H=2, two states, two actions; step-1 moves s0 -> s0 under a0 and s0 -> s1 under a1."""
    transition = np.zeros((2, 2, 2, 2))
    transition[0, 0, 0, 0] = 1.0
    transition[0, 0, 1, 1] = 1.0
    transition[0, 1, :, 1] = 1.0
    transition[1, :, :, 0] = 1.0
    reward = np.zeros((2, 2, 2))
    reward[0, 0] = (0.0, 0.2)
    reward[1, 0] = (0.1, 0.3)
    reward[1, 1] = (0.9, 0.4)
    return FiniteMdp(transition, reward)


def single_action_env(H: int = 3, S: int = 1):
    transition = np.zeros((H, S, 1, S))
    transition[..., 0] = 1.0
    reward = np.full((H, S, 1), 0.5)
    return make_environment(FiniteMdp(transition, reward), onehot_features(H, S, 1))


@pytest.fixture
def hand():
    return hand_mdp()


@pytest.fixture
def hand_env():
    return make_environment(hand_mdp(), kind="tabular_onehot")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
