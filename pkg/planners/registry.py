"""
规划器注册表：规划器 ID → (配置类, 入口函数, 报告中的说明)
"""
from numerics import ConfigError
from planners.cem import plan_cem
from planners.configs import CemConfig, GdConfig, GraspConfig, LiftedConfig, NoisyGdConfig, PlannerConfig
from planners.gd import plan_gd, plan_gd_noisy
from planners.grasp import plan_grasp
from planners.lifted import plan_lifted

PLANNERS = {
    'gd': (GdConfig, lambda problem, cfg, rng, workers: plan_gd(problem, rng=rng, cfg=cfg),
           'shooting 梯度下降'),
    'gd_noisy': (NoisyGdConfig,
                 lambda problem, cfg, rng, workers: plan_gd_noisy(problem, rng=rng, cfg=cfg),
                 'shooting 梯度下降 + 动作 / 展开状态噪声'),
    'lifted': (LiftedConfig, lambda problem, cfg, rng, workers: plan_lifted(problem, rng=rng, cfg=cfg),
               'lifted 联合梯度下降（动作与状态同时优化，动力学作为罚项）'),
    'grasp': (GraspConfig, lambda problem, cfg, rng, workers: plan_grasp(problem, cfg, rng),
              'GRASP'),
    'cem': (CemConfig, lambda problem, cfg, rng, workers: plan_cem(problem, cfg, rng, workers),
            'CEM'),
}


def planner_ids():
    return sorted(PLANNERS)


def resolve_config(planner_id, config=None):
    """把 dict / None / 配置对象统一为对应规划器的配置对象"""
    if planner_id not in PLANNERS:
        raise ConfigError(f"未知的规划器: {planner_id}，可选 {planner_ids()}")
    config_cls = PLANNERS[planner_id][0]
    if isinstance(config, PlannerConfig):
        if not isinstance(config, config_cls):
            raise ConfigError(f"规划器 {planner_id} 需要 {config_cls.__name__}，实际 {type(config).__name__}")
        config.validate()
        return config
    return config_cls.from_dict(config)


def describe_planner(planner_id):
    resolve_config(planner_id)
    return PLANNERS[planner_id][2]


def run_planner(planner_id, problem, config=None, rng=None, workers=1):
    cfg = resolve_config(planner_id, config)
    result = PLANNERS[planner_id][1](problem, cfg, rng, workers)
    result.planner = planner_id
    return result
