import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from jointtrack.core import JointBelief
from jointtrack.models import NoiseModel

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_belief(robots, targets, robot_var=1.0, target_var=10.0) -> JointBelief:
    robots = np.asarray(robots, dtype=float).reshape(-1, 2)
    targets = np.asarray(targets, dtype=float).reshape(-1, 2)
    return JointBelief(
        robots,
        np.tile(robot_var * np.eye(2), (len(robots), 1, 1)),
        targets,
        np.tile(target_var * np.eye(2), (len(targets), 1, 1)),
    )


def spread_points(rng, n, low=0.0, high=10.0, min_sep=0.5):
    """Uniform points with a minimum pairwise separation."""
    while True:
        pts = rng.uniform(low, high, size=(n, 2))
        if n < 2:
            return pts
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        if d[np.triu_indices(n, 1)].min() > min_sep:
            return pts


@pytest.fixture
def nm():
    return NoiseModel()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One PASS/FAIL line per acceptance criterion, echoed after the test run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
