import numpy as np
import pytest

ACCEPTANCE = pytest.StashKey[dict]()
CRITERIA = range(1, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line, then fail the test if the criterion does not hold."""
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[ACCEPTANCE][number] = line
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash[ACCEPTANCE]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in CRITERIA:
        terminalreporter.write_line(lines.get(number, f"criterion {number}: NOT RUN"))
