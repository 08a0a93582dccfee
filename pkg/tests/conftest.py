import numpy as np
import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store (name, passed, detail) for the acceptance summary printed at the end."""
    def record(number, name, passed, detail=""):
        _CRITERIA[number] = (name, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {name}" + (f"  ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
