"""
规划问题与结果
"""
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from numerics import ArgumentError, DivergenceError, as_vector
from utils.objectives import shooting_value


@dataclass
class PlanProblem:
    """从 s0 出发、horizon 步内到达目标 g 的开环规划问题"""
    model: object
    s0: np.ndarray
    g: np.ndarray
    horizon: int
    # 秒；None 表示不限时
    time_limit: float = None

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ArgumentError(f"horizon 必须是 ≥ 1 的整数，实际 {self.horizon}")
        self.horizon = int(self.horizon)
        self.s0 = as_vector(self.s0, self.model.state_dim, 's0')
        self.g = as_vector(self.g, self.model.state_dim, 'g')
        if not (np.all(np.isfinite(self.s0)) and np.all(np.isfinite(self.g))):
            raise ArgumentError("s0 与 g 必须有限")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ArgumentError(f"time_limit 必须为正，实际 {self.time_limit}")

    @property
    def state_dim(self):
        return self.model.state_dim

    @property
    def action_dim(self):
        return self.model.action_dim

    def zero_actions(self):
        return np.zeros((self.horizon, self.action_dim))

    def with_model(self, model):
        """同一任务换一个世界模型（用于在真实世界上复核）"""
        return PlanProblem(model, self.s0, self.g, self.horizon, self.time_limit)

    def interpolation_states(self, init_eps=0.0, rng=None):
        """
        直线插值初始化: s_t = (t/T)g + (1 − t/T)s0 + z
        z 只加在 s_1..s_{T−1} 上，标准差为 init_eps·‖g − s0‖
        """
        fractions = np.arange(self.horizon + 1, dtype=np.float64) / self.horizon
        states = (1.0 - fractions)[:, None] * self.s0 + fractions[:, None] * self.g
        states[0] = self.s0
        states[-1] = self.g
        scale = init_eps * float(np.linalg.norm(self.g - self.s0))
        if self.horizon > 1 and scale > 0:
            if rng is None:
                raise ArgumentError("init_eps > 0 时需要随机数流")
            states[1:-1] += scale * rng.standard_normal((self.horizon - 1, self.state_dim))
        return states


class PlanClock:
    """规划计时；time_limit 为 None 时永不超时"""

    def __init__(self, time_limit=None):
        self.time_limit = time_limit
        self.started = time.perf_counter()

    def elapsed(self):
        return time.perf_counter() - self.started

    def expired(self):
        return self.time_limit is not None and self.elapsed() > self.time_limit


@dataclass
class PlanTrace:
    """逐迭代记录（损失项、同步点的 shooting 损失、耗时）"""
    rows: list = field(default_factory=list)

    def record(self, iteration, elapsed, **terms):
        row = {'iteration': int(iteration), 'elapsed': float(elapsed)}
        row.update({key: float(value) for key, value in terms.items()})
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def to_frame(self):
        return pd.DataFrame(self.rows)


@dataclass
class PlanResult:
    actions: np.ndarray
    # 返回动作在规划模型上重新展开得到的 shooting 损失
    final_loss: float
    iterations_used: int
    wall_clock: float
    diverged: bool = False
    timed_out: bool = False
    # 规划器自身目标（lifted / GRASP 损失）在最后一次迭代的值
    final_objective: float = None
    trace: PlanTrace = None
    planner: str = ''

    def summary(self):
        return {
            'planner': self.planner,
            'final_loss': self.final_loss,
            'iterations_used': self.iterations_used,
            'wall_clock': self.wall_clock,
            'diverged': self.diverged,
            'timed_out': self.timed_out,
            'final_objective': self.final_objective,
        }


def rescore(problem, actions):
    """在规划模型上重新展开并计算 shooting 损失；发散时返回 inf"""
    try:
        return shooting_value(problem.model, problem, actions)
    except DivergenceError:
        return np.inf
