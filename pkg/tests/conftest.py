"""公共夹具与 hypothesis 配置"""
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from models.linear import LinearModel
from models.mlp import MlpModel
from models.wall_world import WallWorld
from numerics import RngStream
from utils.worlds import clear_world_cache

settings.register_profile('fast', max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile('ci', max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'fast'))


@pytest.fixture
def rng():
    return RngStream(1234)


@pytest.fixture
def linear_model():
    """全驱动线性系统（B 可逆）"""
    return LinearModel([[1.0, 0.1], [0.0, 1.0]], [[0.5, 0.0], [0.1, 0.5]])


@pytest.fixture
def wall_world():
    """x = 0 处从 y = −1 到 y = 1 的长墙"""
    return WallWorld(walls=[[[0.0, -1.0], [0.0, 1.0], 0.08]])


@pytest.fixture
def bounded_wall_world():
    return WallWorld(walls=[[[0.0, -1.0], [0.0, 1.0], 0.08]], action_bound=1.0)


@pytest.fixture
def mlp_model():
    stream = RngStream(7)
    sizes = [4, 8, 8, 2]
    weights = [stream.standard_normal((o, i)) / np.sqrt(i) for i, o in zip(sizes[:-1], sizes[1:])]
    biases = [0.1 * stream.standard_normal(o) for o in sizes[1:]]
    return MlpModel(2, 2, weights, biases)


@pytest.fixture(autouse=True)
def fresh_world_cache():
    clear_world_cache()
    yield
    clear_world_cache()
