import time
from contextlib import contextmanager

import pytest

ACCEPTANCE_LINES = {}


@contextmanager
def _criterion(number, title, limit):
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        verdict = "PASS" if ok and elapsed < limit else "FAIL"
        line = f"{verdict} #{number:<2} {title} ({elapsed:.2f}s, limit {limit:g}s)"
        ACCEPTANCE_LINES[number] = line
        print(line)
    assert elapsed < limit, f"criterion {number} took {elapsed:.1f}s, limit {limit:g}s"


@pytest.fixture
def criterion():
    """Context manager that times one acceptance criterion and records its verdict line."""
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
