import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mildns.fields import GridSpec, VelocityField, leray_project

settings.register_profile(
    "default",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[name] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in _ACCEPTANCE:
        verdict = "PASS" if _ACCEPTANCE[name] == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture(scope="session")
def grid16():
    return GridSpec(16, 2 * math.pi)


@pytest.fixture(scope="session")
def grid32():
    return GridSpec(32, 2 * math.pi)


def random_field(grid, seed, solenoidal=False, scale=1.0):
    rng = np.random.default_rng(seed)
    f = VelocityField(grid, scale * rng.normal(size=(3, grid.n, grid.n, grid.n)))
    return leray_project(f) if solenoidal else f
