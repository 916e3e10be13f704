import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mmgr import tensor

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_CRITERIA: list[str] = []


@pytest.fixture
def f64():
    with tensor.precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    """Record one acceptance line; shown again in the terminal summary."""
    def emit(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title}"
        if detail:
            line += f" ({detail})"
        print(line)
        _CRITERIA.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
