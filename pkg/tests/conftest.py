import numpy as np
import pytest

from packetized_etc import CostWeights, LinearSystem, QmcOptions
from packetized_etc.model import validate_deadbeat_gain

# Filled by tests/test_acceptance.py, printed once at the end of the session.
ACCEPTANCE_LINES: list[str] = []

FAST = QmcOptions(max_points=2**12)


@pytest.fixture
def scalar_plant():
    sys_ = LinearSystem.scalar(1.6, 1.0, 1.44, 1.0)
    ctrl = validate_deadbeat_gain(sys_, [[-1.6]], 1)
    return sys_, ctrl, CostWeights([[1.0]], [[1.0]], 0.0)


@pytest.fixture
def second_order_plant():
    sys_ = LinearSystem(
        [[2.2, -1.2], [1.0, 0.0]],
        [[0.8], [0.4]],
        [[1.0, 0.2], [0.2, 1.0]],
        [[6.224, 2.16], [2.16, 2.0]],
    )
    ctrl = validate_deadbeat_gain(sys_, [[-19 / 8, -3 / 4]], 2)
    return sys_, ctrl, CostWeights(np.eye(2), [[1.0]], 0.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
