import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the final summary."""

    def emit(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
