import numpy as np
import pytest
import torch

from bimrl.envgrid import generate_task


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def multiroom():
    return generate_task("MultiRoom", 3, {"room_count": 2, "max_room_size": 4})


@pytest.fixture
def keycorridor():
    return generate_task("KeyCorridor", 7, {"row_count": 1, "room_size": 3})


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
