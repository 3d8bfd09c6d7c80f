import numpy as np
import pytest

from activetouch.geometry import primitive_library
from activetouch.geometry.transforms import Pose, quat_normalize
from activetouch.harness.world import default_probe


@pytest.fixture(scope="session")
def priors():
    return primitive_library()


@pytest.fixture(scope="session")
def probe():
    return default_probe()


def random_pose(rng, spread=0.1):
    return Pose(rng.uniform(-spread, spread, 3), quat_normalize(rng.normal(size=4)))


def random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# acceptance verdicts, printed once at the end of the session
CRITERIA = {}


def record_criterion(number, passed, detail):
    CRITERIA[number] = (bool(passed), detail)
    line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"CRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
