import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from panoloom.oracle import random_scene, render_sequence
from panoloom.trajectory import CameraPath, standard_trajectory

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

EYE_HEIGHT = 1.4
ORACLE_STEP = 0.05
ORACLE_FRAMES = 81


def lifted(kind: str, frames: int = ORACLE_FRAMES, step: float = ORACLE_STEP) -> CameraPath:
    """Standard trajectory raised to eye height."""
    path = standard_trajectory(kind, frames, step)
    return CameraPath(path.positions + np.array([0.0, EYE_HEIGHT, 0.0]))


def oracle_video(seed: int, kind: str, height: int = 120):
    return render_sequence(random_scene(seed), lifted(kind), 2 * height, height, threads=4)


@pytest.fixture(scope="session")
def loop_and_forward_small():
    """Seed-0 loop and forward videos at 120x240, shared across modules."""
    return oracle_video(0, "loop"), oracle_video(0, "forward")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE_FILE = "test_acceptance.py"
_acceptance_outcomes: dict = {}


def pytest_runtest_logreport(report):
    if _ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or report.failed:
        name = report.nodeid.split("::")[-1]
        if _acceptance_outcomes.get(name) != "FAIL":
            _acceptance_outcomes[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_outcomes:
        return
    terminalreporter.section("acceptance")
    for name, outcome in _acceptance_outcomes.items():
        label = name.removeprefix("test_").replace("_", " ")
        terminalreporter.write_line(f"{outcome}  {label}")
    passed = sum(v == "PASS" for v in _acceptance_outcomes.values())
    terminalreporter.write_line(f"{passed}/{len(_acceptance_outcomes)} acceptance criteria passed")
