"""
lifted 联合梯度下降规划器（状态作为自由变量，完整状态梯度，可选状态朗之万噪声）
作为不带截断梯度与同步步的基线
"""
import logging

import numpy as np

from models.base import Trajectory
from numerics import ArgumentError, DivergenceError
from planners.configs import LiftedConfig
from planners.problem import PlanClock, PlanResult, PlanTrace, rescore
from utils.objectives import check_boundary, lifted_value_grad

planners_logger = logging.getLogger('planners')


def plan_lifted(problem, steps=LiftedConfig.steps, eta_a=LiftedConfig.eta_a, eta_s=LiftedConfig.eta_s,
                sigma_state=LiftedConfig.sigma_state, rng=None, cfg=None, init_traj=None,
                noise_decay=LiftedConfig.noise_decay):
    """
    状态按直线插值加噪初始化、动作初始化为 0；
    每步 (a, s) ← (a, s) − (η_a∇_a, η_s∇_s)，再给 s_1..s_{T−1} 加 σ_state·ξ，σ_state 每步乘以 noise_decay。
    返回最后一次迭代的动作，final_loss 为其 shooting 损失
    """
    if cfg is None:
        cfg = LiftedConfig.from_dict({
            'steps': steps, 'eta_a': eta_a, 'eta_s': eta_s, 'sigma_state': sigma_state,
            'noise_decay': noise_decay,
        })
    if rng is None:
        raise ArgumentError("plan_lifted 需要随机数流")
    m = problem.model
    clock = PlanClock(problem.time_limit)
    trace = PlanTrace() if cfg.record_trace else None

    if init_traj is not None:
        check_boundary(problem, init_traj)
        states, actions = init_traj.states.copy(), init_traj.actions.copy()
    else:
        states = problem.interpolation_states(cfg.init_eps, rng.derive('lifted', 'init'))
        actions = problem.zero_actions()
    noise_rng = rng.derive('lifted', 'state-noise')
    free = problem.horizon - 1
    sigma = cfg.sigma_state

    diverged = timed_out = False
    objective = None
    iterations = 0
    for k in range(cfg.steps):
        if clock.expired():
            timed_out = True
            break
        try:
            value, grads = lifted_value_grad(m, problem, Trajectory(states, actions))
        except DivergenceError as e:
            planners_logger.warning(f"lifted 第 {k} 次迭代发散: {e}")
            diverged = True
            break
        objective = value
        if trace is not None:
            trace.record(k, clock.elapsed(), lifted=value)
        if value <= cfg.loss_tol:
            break

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
        iterations = k + 1
        sigma *= cfg.noise_decay

    return PlanResult(
        actions=actions,
        final_loss=rescore(problem, actions),
        iterations_used=iterations,
        wall_clock=clock.elapsed(),
        diverged=diverged,
        timed_out=timed_out,
        final_objective=objective,
        trace=trace,
        planner='lifted',
    )
