import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swinlip.rng import Rng

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return Rng(1234)


def f64(rng, shape, low=-1.0, high=1.0):
    return rng.uniform(shape, low, high).astype(np.float64)


# one line per acceptance criterion, printed at the end of the run
_ACCEPTANCE = {}


class AcceptanceRecorder:
    def __call__(self, number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok


@pytest.fixture
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[number])
