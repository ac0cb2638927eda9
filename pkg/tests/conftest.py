import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from octxai.data import EyeSample

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(name, ok, detail=""):
        _CRITERIA.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


def make_sample(sid="S1", group="HC", eye="L", layer="GCL", grid=None, value=30.0, age=40.0, sex="F"):
    g = np.full((8, 8), value) if grid is None else np.asarray(grid, dtype=float)
    return EyeSample(sid, group, age, sex, eye, layer, g, 30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
