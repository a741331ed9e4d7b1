import math

import numpy as np
import pytest

from oppsched.channel import ChannelModel

SQRT2 = math.sqrt(2.0)


@pytest.fixture
def ref_model():
    """Two-state channel used as the default across the package."""
    return ChannelModel(alpha=0.1, beta=0.1, mu_g=SQRT2, sigma_g=0.5, mu_b=0.0, sigma_b=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
