"""
交叉熵方法（CEM）规划器：扁平动作向量上的对角高斯
"""
import logging

import numpy as np

from models.base import rollout_batch
from numerics import ArgumentError, chunk_slices, parallel_map
from planners.configs import CemConfig
from planners.problem import PlanClock, PlanResult, PlanTrace, rescore

planners_logger = logging.getLogger('planners')


def population_losses(problem, candidates, workers=1):
    """
    并行评估候选动作 (P, T·k) 的 shooting 损失

    按固定分块展开，非有限值记为 inf
    """
    m = problem.model
    shaped = candidates.reshape(candidates.shape[0], problem.horizon, problem.action_dim)

    def evaluate(sl):
        with np.errstate(over='ignore', invalid='ignore'):
            terminal = rollout_batch(m, problem.s0, shaped[sl])[:, -1]
            residual = terminal - problem.g
            return np.sum(residual * residual, axis=1)

    losses = np.concatenate(parallel_map(evaluate, chunk_slices(shaped.shape[0]), workers, purpose='cem'))
    losses[~np.isfinite(losses)] = np.inf
    return losses


def _refit(elites, min_std):
    """精英样本的均值与总体标准差，标准差下限为 min_std"""
    mean = elites.mean(axis=0)
    std = np.maximum(elites.std(axis=0), min_std)
    return mean, std


def plan_cem(problem, cfg=None, rng=None, workers=1):
    if cfg is None:
        cfg = CemConfig()
    elif isinstance(cfg, dict):
        cfg = CemConfig.from_dict(cfg)
    if rng is None:
        raise ArgumentError("plan_cem 需要随机数流")
    clock = PlanClock(problem.time_limit)
    trace = PlanTrace() if cfg.record_trace else None
    sample_rng = rng.derive('cem', 'samples')

    dim = problem.horizon * problem.action_dim
    mean = np.zeros(dim)
    std = np.full(dim, float(cfg.init_std))
    timed_out = False
    iterations = 0

    for it in range(cfg.iterations):
        if clock.expired():
            timed_out = True
            break
        candidates = mean + std * sample_rng.standard_normal((cfg.population, dim))
        losses = population_losses(problem, candidates, workers)
        # 稳定排序：损失相同按候选序号
        order = np.argsort(losses, kind='stable')
        mean, std = _refit(candidates[order[:cfg.elites]], cfg.min_std)
        iterations = it + 1
        if trace is not None:
            trace.record(it, clock.elapsed(), elite_best=losses[order[0]],
                         elite_worst=losses[order[cfg.elites - 1]], mean_std=float(np.mean(std)))

    actions = mean.reshape(problem.horizon, problem.action_dim)
    final_loss = rescore(problem, actions)
    planners_logger.debug(f"CEM 完成: 迭代 {iterations}, 损失 {final_loss:.4e}")
    return PlanResult(
        actions=actions,
        final_loss=final_loss,
        iterations_used=iterations,
        wall_clock=clock.elapsed(),
        diverged=not np.isfinite(final_loss),
        timed_out=timed_out,
        final_objective=final_loss,
        trace=trace,
        planner='cem',
    )
