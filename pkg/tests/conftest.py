import numpy as np
import pytest

from lgdfit.kinematics import default_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_params(rng, pose_scale=0.5):
    v = rng.normal(scale=pose_scale, size=85)
    v[-1] = rng.uniform(0.5, 1.5)
    return v


CRITERIA = []


def record_criterion(name, ok, detail):
    """Remember one acceptance outcome for the end-of-run summary."""
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    CRITERIA.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
