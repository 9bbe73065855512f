"""
世界模型抽象
F(s, a) -> s'，按输入拆分的向量-雅可比积（状态 / 动作），以及轨迹展开
"""
import abc
import logging
import threading
from dataclasses import dataclass

import numpy as np

from config import NumericsConfig
from numerics import ArgumentError, DivergenceError, as_vector, chunk_slices, parallel_map

models_logger = logging.getLogger('models')


@dataclass
class Trajectory:
    """状态 s_0..s_T（T+1 行）与动作 a_0..a_{T-1}（T 行）"""
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.array(self.states, dtype=np.float64, ndmin=2)
        self.actions = np.array(self.actions, dtype=np.float64, ndmin=2)
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ArgumentError(
                f"轨迹长度不一致: {self.states.shape[0]} 个状态, {self.actions.shape[0]} 个动作"
            )

    @property
    def horizon(self):
        return self.actions.shape[0]

    @property
    def terminal(self):
        return self.states[-1]

    def copy(self):
        return Trajectory(self.states.copy(), self.actions.copy())


class WorldModel(abc.ABC):
    """
    可微世界模型基类

    子类只需实现逐行核函数 *_rows（输入形状 (N, n) / (N, k)），
    单条调用即 N=1 的批量调用，保证批量与单条结果逐位一致
    """

    kind = 'abstract'

    def __init__(self, state_dim, action_dim):
        if state_dim < 1 or action_dim < 1:
            raise ArgumentError(f"维度必须 ≥ 1: state_dim={state_dim}, action_dim={action_dim}")
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)

    @abc.abstractmethod
    def forward_rows(self, states, actions):
        """逐行前向: (N, n), (N, k) -> (N, n)"""

    @abc.abstractmethod
    def vjp_state_rows(self, states, actions, cotangents):
        """逐行 (∂F/∂s)ᵀ·c"""

    @abc.abstractmethod
    def vjp_action_rows(self, states, actions, cotangents):
        """逐行 (∂F/∂a)ᵀ·c"""

    def linearize_rows(self, states, actions):
        """
        逐行前向并给出完整雅可比: (N, n), ∂F/∂s (N, n, n), ∂F/∂a (N, n, k)

        默认用单位余切逐行拼出；能一次算出前向与雅可比的模型应当覆盖
        """
        count, n = states.shape[0], self.state_dim
        nxt = self.forward_rows(states, actions)
        rep_states = np.repeat(states, n, axis=0)
        rep_actions = np.repeat(actions, n, axis=0)
        basis = np.tile(np.eye(n), (count, 1))
        jac_s = self.vjp_state_rows(rep_states, rep_actions, basis).reshape(count, n, n)
        jac_a = self.vjp_action_rows(rep_states, rep_actions, basis).reshape(count, n, self.action_dim)
        return nxt, jac_s, jac_a

    @abc.abstractmethod
    def describe(self):
        """序列化描述: {'config': ..., 'parameters': 一维数组}"""

    # ------------------------------------------------------------------
    # 单条接口
    # ------------------------------------------------------------------
    def forward(self, s, a):
        s = as_vector(s, self.state_dim, 'state')
        a = as_vector(a, self.action_dim, 'action')
        return self.forward_rows(s[None, :], a[None, :])[0]

    def vjp_state(self, s, a, cotangent):
        s = as_vector(s, self.state_dim, 'state')
        a = as_vector(a, self.action_dim, 'action')
        c = as_vector(cotangent, self.state_dim, 'cotangent')
        return self.vjp_state_rows(s[None, :], a[None, :], c[None, :])[0]

    def vjp_action(self, s, a, cotangent):
        s = as_vector(s, self.state_dim, 'state')
        a = as_vector(a, self.action_dim, 'action')
        c = as_vector(cotangent, self.state_dim, 'cotangent')
        return self.vjp_action_rows(s[None, :], a[None, :], c[None, :])[0]

    # ------------------------------------------------------------------
    # 批量接口（可并行，结果与调度无关）
    # ------------------------------------------------------------------
    def check_rows(self, states, actions, cotangents=None):
        states = np.asarray(states, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if states.ndim != 2 or states.shape[1] != self.state_dim:
            raise ArgumentError(f"状态批量形状错误: 期望 (N, {self.state_dim})，实际 {states.shape}")
        if actions.ndim != 2 or actions.shape[1] != self.action_dim:
            raise ArgumentError(f"动作批量形状错误: 期望 (N, {self.action_dim})，实际 {actions.shape}")
        if states.shape[0] != actions.shape[0]:
            raise ArgumentError(f"批量长度不一致: {states.shape[0]} vs {actions.shape[0]}")
        if cotangents is None:
            return states, actions
        cotangents = np.asarray(cotangents, dtype=np.float64)
        if cotangents.shape != states.shape:
            raise ArgumentError(f"余切批量形状错误: 期望 {states.shape}，实际 {cotangents.shape}")
        return states, actions, cotangents

    def _map_rows(self, kernel, arrays, workers):
        """分块调用核函数；只有一个分块或单线程时直接整体调用"""
        slices = chunk_slices(arrays[0].shape[0])
        if len(slices) <= 1 or (workers is not None and workers <= 1):
            return kernel(*arrays)
        parts = parallel_map(lambda sl: kernel(*(arr[sl] for arr in arrays)), slices, workers, purpose='batch')
        if isinstance(parts[0], tuple):
            return tuple(np.concatenate(group, axis=0) for group in zip(*parts))
        return np.concatenate(parts, axis=0)

    def batch_forward(self, states, actions, workers=1):
        arrays = self.check_rows(states, actions)
        return self._map_rows(self.forward_rows, arrays, workers)

    def batch_vjp_state(self, states, actions, cotangents, workers=1):
        arrays = self.check_rows(states, actions, cotangents)
        return self._map_rows(self.vjp_state_rows, arrays, workers)

    def batch_vjp_action(self, states, actions, cotangents, workers=1):
        arrays = self.check_rows(states, actions, cotangents)
        return self._map_rows(self.vjp_action_rows, arrays, workers)

    def batch_linearize(self, states, actions, workers=1):
        arrays = self.check_rows(states, actions)
        return self._map_rows(self.linearize_rows, arrays, workers)

    def jacobians(self, s, a):
        """用单位余切拼出完整雅可比 (∂F/∂s: n×n, ∂F/∂a: n×k)"""
        s = as_vector(s, self.state_dim, 'state')
        a = as_vector(a, self.action_dim, 'action')
        eye = np.eye(self.state_dim)
        states = np.repeat(s[None, :], self.state_dim, axis=0)
        actions = np.repeat(a[None, :], self.state_dim, axis=0)
        jac_s = self.vjp_state_rows(states, actions, eye)
        jac_a = self.vjp_action_rows(states, actions, eye)
        return jac_s, jac_a


class CountingModel(WorldModel):
    """统计世界模型逐行调用次数的代理（每个试验独占一个实例）"""

    def __init__(self, inner):
        super().__init__(inner.state_dim, inner.action_dim)
        self.inner = inner
        self.kind = inner.kind
        self.evals = 0
        self._lock = threading.Lock()

    def _count(self, rows):
        with self._lock:
            self.evals += int(rows)

    def forward_rows(self, states, actions):
        self._count(states.shape[0])
        return self.inner.forward_rows(states, actions)

    def vjp_state_rows(self, states, actions, cotangents):
        self._count(states.shape[0])
        return self.inner.vjp_state_rows(states, actions, cotangents)

    def vjp_action_rows(self, states, actions, cotangents):
        self._count(states.shape[0])
        return self.inner.vjp_action_rows(states, actions, cotangents)

    def linearize_rows(self, states, actions):
        # 一次线性化（前向 + 雅可比）记一次调用
        self._count(states.shape[0])
        return self.inner.linearize_rows(states, actions)

    def describe(self):
        return self.inner.describe()


def _check_state(state, step):
    norm = float(np.linalg.norm(state))
    if not np.isfinite(norm) or norm > NumericsConfig.DIVERGENCE_THRESHOLD:
        raise DivergenceError(f"第 {step} 步状态发散 (‖s‖={norm})", step=step, value=norm)


def forward(model, s, a):
    return model.forward(s, a)


def vjp_state(model, s, a, cotangent):
    return model.vjp_state(s, a, cotangent)


def vjp_action(model, s, a, cotangent):
    return model.vjp_action(s, a, cotangent)


def batch_forward(model, pairs, workers=1):
    """pairs 为 (state, action) 序列，返回 (N, n)；与逐条 forward 逐位一致"""
    pairs = list(pairs)
    if not pairs:
        return np.zeros((0, model.state_dim))
    states = np.stack([as_vector(s, model.state_dim, 'state') for s, _ in pairs])
    actions = np.stack([as_vector(a, model.action_dim, 'action') for _, a in pairs])
    return model.batch_forward(states, actions, workers=workers)


def rollout(model, s0, actions, state_noise=None, check=True):
    """
    从 s0 顺序展开: states[t+1] = F(states[t], actions[t]) (+ state_noise[t])

    check=True 时，任一步状态非有限或超过发散阈值即抛出 DivergenceError
    """
    s0 = as_vector(s0, model.state_dim, 's0')
    actions = np.array(actions, dtype=np.float64, ndmin=2)
    if actions.shape[0] < 1:
        raise ArgumentError("horizon 必须 ≥ 1")
    if actions.shape[1] != model.action_dim:
        raise ArgumentError(f"动作维度不匹配: 期望 {model.action_dim}，实际 {actions.shape[1]}")
    horizon = actions.shape[0]
    states = np.zeros((horizon + 1, model.state_dim))
    states[0] = s0
    for t in range(horizon):
        states[t + 1] = model.forward_rows(states[t][None, :], actions[t][None, :])[0]
        if state_noise is not None:
            states[t + 1] += state_noise[t]
        if check:
            _check_state(states[t + 1], t + 1)
    return Trajectory(states, actions.copy())


def rollout_linearized(model, s0, actions, state_noise=None):
    """
    顺序展开并记录每一步的雅可比，返回 (轨迹, ∂F/∂s (T, n, n), ∂F/∂a (T, n, k))

    每步只调用一次 linearize_rows；发散检查与 rollout(check=True) 相同
    """
    s0 = as_vector(s0, model.state_dim, 's0')
    actions = np.array(actions, dtype=np.float64, ndmin=2)
    if actions.shape[0] < 1:
        raise ArgumentError("horizon 必须 ≥ 1")
    if actions.shape[1] != model.action_dim:
        raise ArgumentError(f"动作维度不匹配: 期望 {model.action_dim}，实际 {actions.shape[1]}")
    horizon, n = actions.shape[0], model.state_dim
    states = np.zeros((horizon + 1, n))
    jac_s = np.zeros((horizon, n, n))
    jac_a = np.zeros((horizon, n, model.action_dim))
    states[0] = s0
    for t in range(horizon):
        nxt, js, ja = model.linearize_rows(states[t][None, :], actions[t][None, :])
        states[t + 1] = nxt[0]
        jac_s[t], jac_a[t] = js[0], ja[0]
        if state_noise is not None:
            states[t + 1] += state_noise[t]
        _check_state(states[t + 1], t + 1)
    return Trajectory(states, actions.copy()), jac_s, jac_a


def rollout_batch(model, s0, actions, state_noise=None):
    """
    种群并行展开: s0 (n,) 或 (P, n)，actions (P, T, k) -> states (P, T+1, n)

    逐行核函数保证每条轨迹与单独 rollout 的结果逐位一致；不做发散检查
    """
    actions = np.asarray(actions, dtype=np.float64)
    population, horizon = actions.shape[0], actions.shape[1]
    states = np.zeros((population, horizon + 1, model.state_dim))
    states[:, 0] = np.broadcast_to(np.asarray(s0, dtype=np.float64), (population, model.state_dim))
    for t in range(horizon):
        states[:, t + 1] = model.forward_rows(states[:, t], actions[:, t])
        if state_noise is not None:
            states[:, t + 1] += state_noise[:, t]
    return states
