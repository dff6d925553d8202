import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("desk", max_examples=25, deadline=None)
settings.load_profile("desk")


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


# one verdict line per acceptance criterion, printed after the run
VERDICTS = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[number])
