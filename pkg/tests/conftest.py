import numpy as np
import pytest

from cfdrive.config import RuleConfig
from cfdrive.demo import corridor_scene, signal_scene
from cfdrive.scene import expert_trajectory


@pytest.fixture(scope="session")
def rules():
    return RuleConfig()


@pytest.fixture(scope="session")
def corridor():
    return corridor_scene()


@pytest.fixture(scope="session")
def corridor_expert(corridor):
    return expert_trajectory(corridor)


@pytest.fixture(scope="session")
def signal():
    return signal_scene()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
