import numpy as np
import pytest

from rigidpose.geometry import CorrespondenceSet, Pose, random_rotation

_RESULTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_RESULTS] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in results:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def record(request):
    """Log one acceptance criterion outcome for the terminal summary."""

    def _record(name: str, passed: bool, detail: str) -> None:
        request.config.stash[_RESULTS].append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")

    return _record


def random_pose(rng) -> Pose:
    return Pose(random_rotation(rng), rng.uniform(-3.0, 3.0, size=3))


def noisy_instance(rng, n=50, sigma=0.01) -> tuple[CorrespondenceSet, Pose]:
    pose = random_pose(rng)
    a = rng.standard_normal((n, 3))
    b = a @ pose.rotation.T + pose.translation + sigma * rng.standard_normal((n, 3))
    return CorrespondenceSet(a, b, 1.0 - rng.random(n)), pose


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
