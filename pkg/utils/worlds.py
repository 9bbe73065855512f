"""
世界与任务构造
世界描述 {id, params} → 世界模型；任务描述 {family, params} + 随机流 → (s0, g)
"""
import json
import logging
import os
import threading

import numpy as np

from models.linear import LinearModel
from models.model_store import load_model
from models.wall_world import WallWorld
from numerics import ConfigError, as_vector

harness_logger = logging.getLogger('harness')

# 已构造的世界缓存（模型构造后不可变，可在线程间共享）
_WORLD_CACHE = {}
_CACHE_LOCK = threading.Lock()


def gap_walls(gap_center=0.0, gap_width=0.5, thickness=0.08, extent=2.0, x=0.0):
    """x 处的竖直墙，中间在 [gap_center − gap_width/2, gap_center + gap_width/2] 留出缺口"""
    half = gap_width / 2.0
    return [
        [[x, gap_center + half + thickness], [x, extent], thickness],
        [[x, -extent], [x, gap_center - half - thickness], thickness],
    ]


def _build_wall(params):
    params = dict(params)
    preset = params.pop('preset', None)
    if preset == 'gap':
        gap = params.pop('gap', {})
        params['walls'] = gap_walls(**gap)
    elif preset is not None:
        raise ConfigError(f"未知的墙体预设: {preset}")
    try:
        return WallWorld(**params)
    except TypeError as e:
        raise ConfigError(f"wall 世界参数错误: {e}") from e


def _build_linear(params):
    if 'A' not in params or 'B' not in params:
        raise ConfigError("linear 世界需要 A 与 B")
    unknown = sorted(set(params) - {'A', 'B', 'c'})
    if unknown:
        raise ConfigError(f"linear 世界不支持的参数: {unknown}")
    return LinearModel(params['A'], params['B'], params.get('c'))


def _build_model_file(params):
    path = params.get('path')
    if not path:
        raise ConfigError("model_file 世界需要 path")
    model, _ = load_model(path)
    return model


WORLD_BUILDERS = {
    'wall': _build_wall,
    'linear': _build_linear,
    'model_file': _build_model_file,
}


def build_world(spec):
    """按描述构造世界；相同描述只构造一次"""
    if not isinstance(spec, dict) or spec.get('id') not in WORLD_BUILDERS:
        raise ConfigError(f"世界描述无效: {spec}，id 可选 {sorted(WORLD_BUILDERS)}")
    key = json.dumps(spec, sort_keys=True)
    world = _WORLD_CACHE.get(key)
    if world is not None:
        return world

    with _CACHE_LOCK:
        world = _WORLD_CACHE.get(key)
        if world is None:
            world = WORLD_BUILDERS[spec['id']](spec.get('params') or {})
            _WORLD_CACHE[key] = world
            harness_logger.info(f"世界已构造: {spec['id']} (状态维度 {world.state_dim}, 动作维度 {world.action_dim})")
        return world


def clear_world_cache():
    with _CACHE_LOCK:
        _WORLD_CACHE.clear()


# ----------------------------------------------------------------------
# 任务
# ----------------------------------------------------------------------
def _fixed_task(params, rng, world):
    if 's0' not in params or 'g' not in params:
        raise ConfigError("fixed 任务需要 s0 与 g")
    return as_vector(params['s0'], world.state_dim, 's0'), as_vector(params['g'], world.state_dim, 'g')


def _wall_detour_task(params, rng, world):
    """
    起点与目标分居墙两侧、在缺口同一侧，直线路径被墙挡住（默认 |y| 紧挨缺口边缘的墙段）

    x 偏移从 x_range 均匀抽取，|y| 从 y_range 均匀抽取，上下侧随机
    """
    x_low, x_high = params.get('x_range', [0.2, 0.5])
    y_low, y_high = params.get('y_range', [0.35, 0.6])
    draws = rng.uniform(size=5)
    side = 1.0 if draws[4] < 0.5 else -1.0
    s0 = np.array([-(x_low + (x_high - x_low) * draws[0]), side * (y_low + (y_high - y_low) * draws[1])])
    g = np.array([x_low + (x_high - x_low) * draws[2], side * (y_low + (y_high - y_low) * draws[3])])
    return s0, g


def _free_space_task(params, rng, world):
    """无障碍直线任务：目标在起点的 distance 距离处，方向随机"""
    distance = float(params.get('distance', 1.0))
    direction = rng.standard_normal(world.state_dim)
    direction /= np.linalg.norm(direction)
    s0 = np.asarray(params.get('s0', np.zeros(world.state_dim)), dtype=np.float64)
    return s0, s0 + distance * direction


def _random_reachable_task(params, rng, world):
    """线性世界上的随机目标（能控系统上总可达）"""
    scale = float(params.get('scale', 1.0))
    s0 = scale * rng.standard_normal(world.state_dim)
    g = scale * rng.standard_normal(world.state_dim)
    return s0, g


TASK_FAMILIES = {
    'fixed': _fixed_task,
    'wall_detour': _wall_detour_task,
    'free_space': _free_space_task,
    'random_reachable': _random_reachable_task,
}


def make_task(task, rng, world):
    if not isinstance(task, dict) or task.get('family') not in TASK_FAMILIES:
        raise ConfigError(f"任务描述无效: {task}，family 可选 {sorted(TASK_FAMILIES)}")
    return TASK_FAMILIES[task['family']](task.get('params') or {}, rng, world)


def resolve_model_path(path, base_dir):
    """配置文件中的相对模型路径相对于配置文件所在目录"""
    if path and not os.path.isabs(path):
        return os.path.normpath(os.path.join(base_dir, path))
    return path
