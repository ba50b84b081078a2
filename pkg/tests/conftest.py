import pytest

from stiffwork import model

# criterion number -> list of report lines, filled by the acceptance tests
REPORT = {}


def record(number, passed, text):
    REPORT.setdefault(number, []).append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {text}")
    return passed


@pytest.fixture
def report():
    return record


def free_eigensystems():
    """Drop cached eigensystems; two N = 15 decompositions do not fit in memory together."""
    model.eigensystem.cache_clear()


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(REPORT):
        for line in REPORT[k]:
            terminalreporter.write_line(line)
