"""
规划损失及其梯度

shooting: ‖s_T(a, s0) − g‖²，梯度经整条展开反向传播
lifted:   Σ‖F(s_t, a_t) − s_{t+1}‖²，s0 固定、s_T = g，状态与动作都是自由变量
grasp:    Σ‖F(s̄_t, a_t) − s_{t+1}‖² + Σ β_t‖F(s̄_t, a_t) − g‖²，s̄_t 为截断梯度的状态副本

所有损失均为未归一化的求和；自由状态只有 s_1..s_{T−1}
"""
from dataclasses import dataclass, field

import numpy as np

from config import NumericsConfig
from models.base import Trajectory, rollout, rollout_linearized
from numerics import ArgumentError, DivergenceError, as_vector, pairwise_sum


LOSS_KINDS = ('shooting', 'lifted', 'grasp')


@dataclass
class LossGrads:
    # (T, k)
    d_actions: np.ndarray
    # (T−1, n)，对应 s_1..s_{T−1}
    d_states: np.ndarray
    terms: dict = field(default_factory=dict)


def _finite_value(value, label):
    if not np.isfinite(value) or value > NumericsConfig.DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"{label} 损失发散: {value}", value=value)
    return value


def shooting_value(m, problem, actions, state_noise=None):
    traj = rollout(m, problem.s0, actions, state_noise=state_noise)
    residual = traj.terminal - problem.g
    return _finite_value(pairwise_sum(residual ** 2), 'shooting')


def shooting_value_grad(m, problem, actions, state_noise=None):
    """
    返回 (value, d_actions)

    反向扫描: c_T = 2(s_T − g)，d_{a_t} = (∂F/∂a_t)ᵀc_{t+1}，c_t = (∂F/∂s_t)ᵀc_{t+1}
    state_noise 为展开时逐步叠加的状态噪声（加性噪声不改变雅可比）
    """
    actions = np.array(actions, dtype=np.float64, ndmin=2)
    if actions.shape != (problem.horizon, m.action_dim):
        raise ArgumentError(f"动作形状错误: 期望 {(problem.horizon, m.action_dim)}，实际 {actions.shape}")
    traj, jac_s, jac_a = rollout_linearized(m, problem.s0, actions, state_noise=state_noise)
    residual = traj.terminal - problem.g
    value = _finite_value(pairwise_sum(residual ** 2), 'shooting')

    d_actions = np.zeros_like(actions)
    cot = 2.0 * residual
    for t in range(problem.horizon - 1, -1, -1):
        d_actions[t] = cot @ jac_a[t]
        cot = cot @ jac_s[t]
        if not np.all(np.isfinite(cot)):
            raise DivergenceError(f"第 {t} 步反向梯度发散", step=t)
    return value, d_actions


def check_boundary(problem, traj):
    """轨迹必须满足 s_0 = problem.s0 且 s_T = g"""
    if traj.horizon != problem.horizon:
        raise ArgumentError(f"轨迹长度 {traj.horizon} 与 horizon {problem.horizon} 不一致")
    tol = NumericsConfig.BOUNDARY_TOL
    scale_0 = max(1.0, float(np.max(np.abs(problem.s0))))
    scale_g = max(1.0, float(np.max(np.abs(problem.g))))
    if float(np.max(np.abs(traj.states[0] - problem.s0))) > tol * scale_0:
        raise ArgumentError("轨迹起点与 s0 不一致")
    if float(np.max(np.abs(traj.states[-1] - problem.g))) > tol * scale_g:
        raise ArgumentError("轨迹终点未固定在目标 g")


def _predictions(m, traj, workers):
    states_in = traj.states[:-1]
    pred = m.batch_forward(states_in, traj.actions, workers=workers)
    return states_in, pred


def _linearized(m, traj, workers):
    """一次批量线性化: 预测 F(s_t, a_t) 与逐步雅可比"""
    pred, jac_s, jac_a = m.batch_linearize(traj.states[:-1], traj.actions, workers=workers)
    return pred, jac_s, jac_a


def _pullback(cot, jac):
    """逐行 Jᵀc: (T, n) × (T, n, m) -> (T, m)"""
    return np.einsum('ti,tij->tj', cot, jac)


def lifted_value(m, problem, traj, workers=1):
    check_boundary(problem, traj)
    _, pred = _predictions(m, traj, workers)
    residual = pred - traj.states[1:]
    return _finite_value(pairwise_sum(residual.ravel() ** 2), 'lifted')


def lifted_value_grad(m, problem, traj, workers=1):
    """
    完整梯度（经过状态输入与下一状态两条路径）:
    d_{s_t} = 2(∂F/∂s_t)ᵀr_t − 2r_{t−1}，d_{a_t} = 2(∂F/∂a_t)ᵀr_t，r_t = F(s_t, a_t) − s_{t+1}
    """
    check_boundary(problem, traj)
    pred, jac_s, jac_a = _linearized(m, traj, workers)
    residual = pred - traj.states[1:]
    value = _finite_value(pairwise_sum(residual.ravel() ** 2), 'lifted')

    cot = 2.0 * residual
    d_actions = _pullback(cot, jac_a)
    through_state = _pullback(cot, jac_s)
    d_states = through_state[1:] - cot[:-1]
    return value, LossGrads(d_actions, d_states, {'dyn': value})


def _goal_weights(problem, gamma, goal_weights):
    if goal_weights is None:
        if gamma is None or not np.isfinite(gamma) or gamma <= 0:
            raise ArgumentError(f"gamma 必须为正，实际 {gamma}")
        return np.full(problem.horizon, float(gamma))
    weights = as_vector(goal_weights, problem.horizon, 'goal_weights')
    if np.any(weights < 0):
        raise ArgumentError("goal_weights 必须非负")
    return weights


def _grasp_terms(problem, traj, pred, weights):
    residual = pred - traj.states[1:]
    to_goal = pred - problem.g
    dyn = pairwise_sum(residual.ravel() ** 2)
    goal = pairwise_sum((weights[:, None] * to_goal ** 2).ravel())
    return residual, to_goal, dyn, goal


def grasp_value(m, problem, traj, gamma, goal_weights=None, workers=1):
    check_boundary(problem, traj)
    weights = _goal_weights(problem, gamma, goal_weights)
    _, pred = _predictions(m, traj, workers)
    _, _, dyn, goal = _grasp_terms(problem, traj, pred, weights)
    return _finite_value(dyn + goal, 'grasp')


def grasp_value_grad(m, problem, traj, gamma, goal_weights=None, detach_state=True, workers=1):
    """
    截断梯度的 GRASP 损失

    d_{s_{t+1}} = −2(F(s̄_t, a_t) − s_{t+1})，不含 (∂F/∂s)ᵀ 项；
    d_{a_t} = 2(∂F/∂a_t)ᵀ[(F − s_{t+1}) + β_t(F − g)]。
    detach_state=False 时恢复经过状态输入的梯度（消融对照）。
    """
    check_boundary(problem, traj)
    weights = _goal_weights(problem, gamma, goal_weights)
    pred, jac_s, jac_a = _linearized(m, traj, workers)
    residual, to_goal, dyn, goal = _grasp_terms(problem, traj, pred, weights)
    value = _finite_value(dyn + goal, 'grasp')

    cot = 2.0 * (residual + weights[:, None] * to_goal)
    d_actions = _pullback(cot, jac_a)
    d_states = -2.0 * residual[:-1]
    if not detach_state:
        d_states = d_states + _pullback(cot, jac_s)[1:]
    return value, LossGrads(d_actions, d_states, {'dyn': dyn, 'goal': goal})


# ----------------------------------------------------------------------
# 扁平参数向量（景观切片使用）
# ----------------------------------------------------------------------
def pack_lifted(traj):
    return np.concatenate([traj.states[1:-1].ravel(), traj.actions.ravel()])


def unpack_lifted(problem, z):
    n, k, T = problem.state_dim, problem.action_dim, problem.horizon
    z = as_vector(z, n * (T - 1) + k * T, 'z')
    states = np.zeros((T + 1, n))
    states[0] = problem.s0
    states[-1] = problem.g
    states[1:-1] = z[:n * (T - 1)].reshape(T - 1, n)
    actions = z[n * (T - 1):].reshape(T, k)
    return Trajectory(states, actions)


def flat_loss(kind, m, problem, gamma=None, goal_weights=None):
    """
    返回以扁平向量为参数的标量损失函数

    shooting 的参数为动作；lifted / grasp 的参数为 (s_1..s_{T−1}, a_0..a_{T−1})。
    发散点返回 inf。
    """
    if kind not in LOSS_KINDS:
        raise ArgumentError(f"未知的损失类型: {kind}，可选 {LOSS_KINDS}")

    def evaluate(z):
        try:
            if kind == 'shooting':
                actions = as_vector(z, problem.horizon * problem.action_dim, 'z')
                return shooting_value(m, problem, actions.reshape(problem.horizon, problem.action_dim))
            traj = unpack_lifted(problem, z)
            if kind == 'lifted':
                return lifted_value(m, problem, traj)
            return grasp_value(m, problem, traj, gamma, goal_weights)
        except DivergenceError:
            return np.inf

    return evaluate


def flat_center(kind, problem, actions, states=None):
    """把规划结果转换成 flat_loss 的参数向量；lifted / grasp 未给状态时用动作展开得到的状态"""
    actions = np.array(actions, dtype=np.float64, ndmin=2)
    if kind == 'shooting':
        return actions.ravel().copy()
    if states is None:
        states = rollout(problem.model, problem.s0, actions, check=False).states.copy()
    states = np.array(states, dtype=np.float64)
    states[0] = problem.s0
    states[-1] = problem.g
    return pack_lifted(Trajectory(states, actions))
