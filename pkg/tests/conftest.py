import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "bohmlab",
    max_examples=int(os.environ.get("HYPOTHESIS_MAX_EXAMPLES", "30")),
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("bohmlab")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def rng_np():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
