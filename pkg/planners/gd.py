"""
shooting 梯度下降规划器（含动作噪声 / 展开状态噪声的消融变体）
"""
import logging

import numpy as np

from numerics import ArgumentError, DivergenceError
from planners.configs import GdConfig, NoisyGdConfig
from planners.problem import PlanClock, PlanResult, PlanTrace, rescore
from utils.objectives import shooting_value_grad

planners_logger = logging.getLogger('planners')


def _descend(problem, cfg, rng, sigma_a=0.0, sigma_s=0.0, label='gd'):
    """
    动作初始化为 0，对 shooting 损失做固定步长梯度下降，返回损失最小的迭代

    sigma_a / sigma_s 均为 0 时不抽取任何噪声，与普通梯度下降逐位一致；
    否则梯度在扰动后的动作 / 带噪展开上计算，更新作用在未扰动的动作上
    """
    m = problem.model
    clock = PlanClock(problem.time_limit)
    trace = PlanTrace() if cfg.record_trace else None
    noisy = sigma_a > 0 or sigma_s > 0
    if noisy and rng is None:
        raise ArgumentError("带噪梯度下降需要随机数流")
    noise_rng = rng.derive(label, 'noise') if noisy else None

    actions = problem.zero_actions()
    best_actions, best_loss = actions.copy(), np.inf
    diverged = timed_out = False
    evaluated_last = False
    iterations = 0

    for k in range(cfg.steps):
        if clock.expired():
            timed_out = True
            break
        try:
            loss, grad = shooting_value_grad(m, problem, actions)
            if noisy:
                action_noise = sigma_a * noise_rng.standard_normal(actions.shape) if sigma_a > 0 else 0.0
                state_noise = (sigma_s * noise_rng.standard_normal((problem.horizon, problem.state_dim))
                               if sigma_s > 0 else None)
                _, grad = shooting_value_grad(m, problem, actions + action_noise, state_noise=state_noise)
        except DivergenceError as e:
            planners_logger.warning(f"{label} 第 {k} 次迭代发散: {e}")
            diverged = True
            evaluated_last = True
            break

        evaluated_last = True
        if loss < best_loss:
            best_loss, best_actions = loss, actions.copy()
        if trace is not None:
            trace.record(k, clock.elapsed(), shooting=loss)
        if loss <= cfg.loss_tol:
            break

        actions = actions - cfg.eta * grad
        evaluated_last = False
        iterations = k + 1

    if not evaluated_last:
        loss = rescore(problem, actions)
        if loss < best_loss:
            best_loss, best_actions = loss, actions.copy()

    result = PlanResult(
        actions=best_actions,
        final_loss=rescore(problem, best_actions),
        iterations_used=iterations,
        wall_clock=clock.elapsed(),
        diverged=diverged,
        timed_out=timed_out,
        final_objective=best_loss,
        trace=trace,
        planner=label,
    )
    planners_logger.debug(
        f"{label} 完成: 迭代 {iterations}, 损失 {result.final_loss:.4e}, 发散 {diverged}, 超时 {timed_out}"
    )
    return result


def plan_gd(problem, steps=GdConfig.steps, eta=GdConfig.eta, rng=None, cfg=None):
    if cfg is None:
        cfg = GdConfig.from_dict({'steps': steps, 'eta': eta})
    return _descend(problem, cfg, rng, label='gd')


def plan_gd_noisy(problem, steps=GdConfig.steps, eta=GdConfig.eta, sigma_a=0.0, sigma_s=0.0,
                  rng=None, cfg=None):
    if cfg is None:
        cfg = NoisyGdConfig.from_dict({'steps': steps, 'eta': eta, 'sigma_a': sigma_a, 'sigma_s': sigma_s})
    return _descend(problem, cfg, rng, sigma_a=cfg.sigma_a, sigma_s=cfg.sigma_s, label='gd_noisy')
