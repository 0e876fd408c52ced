import numpy as np
import pytest

from ccfusion.channel import ChannelParams, sample_dataset
from ccfusion.world import build_scene, default_scene, generate_trajectory


@pytest.fixture(scope="session")
def scene():
    return default_scene()


@pytest.fixture(scope="session")
def small_dataset(scene):
    traj = generate_trajectory(scene, 400, seed=3)
    return sample_dataset(scene, traj, seed=3)


@pytest.fixture(scope="session")
def square_room():
    return build_scene([(0, 0), (10, 0), (10, 10), (0, 10)], [(5, 5, 3.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def los_params():
    """Noise-free single path channel."""
    return ChannelParams(snr_db=np.inf, reflection_coeff=0.0)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
