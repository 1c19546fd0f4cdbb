import numpy as np
import pytest

from routine_rl.config import AgentConfig
from routine_rl.envs import EnvSpec
from routine_rl.models import RoutineSpaceSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spec():
    return EnvSpec("point_reach", 6, 2, 200)


@pytest.fixture
def space():
    return RoutineSpaceSpec(4, 2)


@pytest.fixture
def small_cfg():
    return AgentConfig(hidden_dim=16, batch_size=8, min_data=10, buffer_size=200)


TINY_CONFIG = """\
env = point_reach
seeds = 0, 1
epochs = 3
steps_per_epoch = 40
eval_episodes = 1
agent.algorithm = routine_td3
agent.hidden_dim = 8
agent.batch_size = 4
agent.min_data = 20
agent.buffer_size = 500
"""


@pytest.fixture
def tiny_config_text():
    return TINY_CONFIG
