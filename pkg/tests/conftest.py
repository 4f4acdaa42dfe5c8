import sys
from pathlib import Path

import numpy as np
import pytest

from epinit.model import DEFAULT_PARAMS, NoiseConfig

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def params():
    return DEFAULT_PARAMS


@pytest.fixture
def noise():
    return NoiseConfig((0.1,) * 5, 0.1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
