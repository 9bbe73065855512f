"""
规划器配置
每个配置都是 dataclass；from_dict 填充默认值、拒绝未知字段并检查取值范围
"""
from dataclasses import asdict, dataclass, fields

import numpy as np

from numerics import ConfigError


class PlannerConfig:

    @classmethod
    def from_dict(cls, data=None):
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{cls.__name__} 不支持的字段: {unknown}")
        try:
            cfg = cls(**data)
        except TypeError as e:
            raise ConfigError(f"{cls.__name__} 字段错误: {e}") from e
        cfg.validate()
        return cfg

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        merged = self.to_dict()
        merged.update(changes)
        return type(self).from_dict(merged)

    def validate(self):
        pass

    # 校验辅助
    def _positive(self, *names):
        for name in names:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not np.isfinite(value) or value <= 0:
                raise ConfigError(f"{type(self).__name__}.{name} 必须为正，实际 {value}")

    def _non_negative(self, *names):
        for name in names:
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not np.isfinite(value) or value < 0:
                raise ConfigError(f"{type(self).__name__}.{name} 必须非负，实际 {value}")

    def _count(self, name, minimum):
        value = getattr(self, name)
        if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
            raise ConfigError(f"{type(self).__name__}.{name} 必须是 ≥ {minimum} 的整数，实际 {value}")

    def _decay(self, name):
        value = getattr(self, name)
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 < value <= 1:
            raise ConfigError(f"{type(self).__name__}.{name} 必须在 (0, 1] 内，实际 {value}")


@dataclass
class GdConfig(PlannerConfig):
    """shooting 梯度下降"""
    steps: int = 500
    eta: float = 0.1
    # shooting 损失不超过该值即提前停止
    loss_tol: float = 1e-12
    record_trace: bool = False

    def validate(self):
        self._count('steps', 1)
        self._positive('eta')
        self._non_negative('loss_tol')


@dataclass
class NoisyGdConfig(GdConfig):
    """带动作噪声 / 展开状态噪声的 shooting 梯度下降"""
    sigma_a: float = 0.0
    sigma_s: float = 0.0

    def validate(self):
        super().validate()
        self._non_negative('sigma_a', 'sigma_s')


@dataclass
class LiftedConfig(PlannerConfig):
    """普通 lifted 联合梯度下降（完整状态梯度 + 状态高斯噪声）"""
    steps: int = 1000
    eta_a: float = 0.1
    eta_s: float = 0.1
    sigma_state: float = 0.0
    # 每步 sigma_state 乘以该因子（1.0 表示不衰减）
    noise_decay: float = 1.0
    # 初始状态噪声标准差，相对 ‖g − s0‖
    init_eps: float = 0.1
    loss_tol: float = 1e-12
    record_trace: bool = False

    def validate(self):
        self._count('steps', 1)
        self._positive('eta_a', 'eta_s')
        self._non_negative('sigma_state', 'init_eps', 'loss_tol')
        self._decay('noise_decay')


@dataclass
class GraspConfig(PlannerConfig):
    steps: int = 500
    eta_a: float = 0.1
    eta_s: float = 0.25
    sigma_state: float = 0.0
    gamma: float = 1.0
    # None 表示不做同步
    K_sync: int = 100
    J_sync: int = 10
    eta_sync: float = 0.1
    # 每步 sigma_state 乘以该因子（1.0 表示不衰减）
    noise_decay: float = 1.0
    init_eps: float = 0.1
    # False 时保留经过状态输入的梯度（消融对照）
    detach_state: bool = True
    record_trace: bool = False

    def validate(self):
        self._count('steps', 1)
        self._positive('eta_a', 'eta_s', 'gamma', 'eta_sync')
        self._non_negative('sigma_state', 'init_eps')
        if self.K_sync is not None:
            self._count('K_sync', 1)
        self._count('J_sync', 0)
        self._decay('noise_decay')


@dataclass
class CemConfig(PlannerConfig):
    population: int = 256
    elites: int = 32
    iterations: int = 50
    init_std: float = 1.0
    min_std: float = 1e-3
    record_trace: bool = False

    def validate(self):
        self._count('population', 1)
        self._count('elites', 1)
        self._count('iterations', 1)
        if self.elites > self.population:
            raise ConfigError(f"CemConfig.elites ({self.elites}) 不能大于 population ({self.population})")
        self._positive('init_std')
        self._non_negative('min_std')
