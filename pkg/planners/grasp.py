"""
GRASP 规划器

循环 K 步:
  1. 联合步: 在截断梯度的 GRASP 损失上同时更新动作与中间状态
  2. 随机状态: s_t ← s_t + σ_state·ξ_t（t = 1..T−1）
  3. 周期同步: 每 K_sync 步从 s0 完整展开，在 shooting 损失上做 J_sync 步梯度下降，
     再用最后一次展开的状态重新设置中间状态
在所有同步点与最终迭代中选 shooting 损失最小的动作返回
"""
import logging

import numpy as np

from models.base import Trajectory, rollout
from numerics import ArgumentError, DivergenceError
from planners.configs import GraspConfig
from planners.problem import PlanClock, PlanResult, PlanTrace, rescore
from utils.objectives import grasp_value_grad, shooting_value_grad

planners_logger = logging.getLogger('planners')


class _BestIterate:
    """按 shooting 损失记录最优动作（严格更小才替换，保证确定性）"""

    def __init__(self):
        self.loss = np.inf
        self.actions = None

    def offer(self, loss, actions):
        if self.actions is None or loss < self.loss:
            self.loss = float(loss)
            self.actions = actions.copy()


def _sync(problem, actions, cfg, best):
    """同步步，返回 (新动作, 展开后的状态)；展开发散时抛出 DivergenceError"""
    m = problem.model
    for _ in range(cfg.J_sync):
        loss, grad = shooting_value_grad(m, problem, actions)
        best.offer(loss, actions)
        actions = actions - cfg.eta_sync * grad
    traj = rollout(m, problem.s0, actions)
    residual = traj.terminal - problem.g
    best.offer(float(residual @ residual), actions)
    return actions, traj.states


def plan_grasp(problem, cfg=None, rng=None):
    if cfg is None:
        cfg = GraspConfig()
    elif isinstance(cfg, dict):
        cfg = GraspConfig.from_dict(cfg)
    if rng is None:
        raise ArgumentError("plan_grasp 需要随机数流")
    m = problem.model
    clock = PlanClock(problem.time_limit)
    trace = PlanTrace() if cfg.record_trace else None

    states = problem.interpolation_states(cfg.init_eps, rng.derive('grasp', 'init'))
    actions = problem.zero_actions()
    noise_rng = rng.derive('grasp', 'state-noise')
    free = problem.horizon - 1
    sigma = cfg.sigma_state

    best = _BestIterate()
    diverged = timed_out = False
    objective = None
    iterations = 0

    for k in range(1, cfg.steps + 1):
        if clock.expired():
            timed_out = True
            break
        try:
            value, grads = grasp_value_grad(
                m, problem, Trajectory(states, actions), cfg.gamma, detach_state=cfg.detach_state
            )
        except DivergenceError as e:
            planners_logger.warning(f"GRASP 第 {k} 次迭代发散: {e}")
            diverged = True
            break
        objective = value

        new_actions = actions - cfg.eta_a * grads.d_actions
        new_states = states.copy()
        if free > 0:
            new_states[1:-1] -= cfg.eta_s * grads.d_states
            if sigma > 0:
                new_states[1:-1] += sigma * noise_rng.standard_normal((free, problem.state_dim))
        if not (np.all(np.isfinite(new_actions)) and np.all(np.isfinite(new_states))):
            diverged = True
            break
        states, actions = new_states, new_actions
        sigma *= cfg.noise_decay
        iterations = k

        synced = None
        if cfg.K_sync is not None and k % cfg.K_sync == 0:
            try:
                actions, rolled = _sync(problem, actions, cfg, best)
            except DivergenceError as e:
                planners_logger.warning(f"GRASP 第 {k} 次同步展开发散: {e}")
                diverged = True
                break
            states[1:-1] = rolled[1:-1]
            synced = best.loss

        if trace is not None:
            terms = {'grasp': value, 'dyn': grads.terms['dyn'], 'goal': grads.terms['goal']}
            if synced is not None:
                terms['shooting_best'] = synced
            trace.record(k, clock.elapsed(), **terms)

    best.offer(rescore(problem, actions), actions)

    result = PlanResult(
        actions=best.actions,
        final_loss=rescore(problem, best.actions),
        iterations_used=iterations,
        wall_clock=clock.elapsed(),
        diverged=diverged,
        timed_out=timed_out,
        final_objective=objective,
        trace=trace,
        planner='grasp',
    )
    planners_logger.debug(
        f"GRASP 完成: 迭代 {iterations}, 损失 {result.final_loss:.4e}, 发散 {diverged}, 超时 {timed_out}"
    )
    return result
