"""
二维软墙世界

s' = y − ∇Φ(y)，y = s + δ·d(a)
Φ 为到墙段距离的光滑铰链惩罚: Φ_w = κ/2 · p̃²，p̃ = τ·softplus((厚度 − d_ε)/τ)，
d_ε = sqrt(‖y − q(y)‖² + ε²)。q(y) = p1 + t̃·u 为墙段上的“最近点”，
t̃ 是沿墙坐标 t 在 [0, L] 上的光滑截断（宽度 ω），端点处雅可比连续，整个映射 C^∞。
无墙且未设置动作上界时 forward(s, a) = s + δa。
"""
import numpy as np
from scipy.special import expit

from models.base import WorldModel
from numerics import ArgumentError, as_vector


class WallWorld(WorldModel):
    kind = 'wall'

    def __init__(self, walls=(), stiffness=5.0, step_scale=0.1, softness=0.05,
                 center_smoothing=1e-2, end_smoothing=2e-2, action_bound=None):
        super().__init__(2, 2)
        if stiffness < 0 or step_scale <= 0 or softness <= 0 or center_smoothing <= 0 or end_smoothing <= 0:
            raise ArgumentError(
                "stiffness ≥ 0，step_scale / softness / center_smoothing / end_smoothing 必须为正"
            )
        if action_bound is not None and action_bound <= 0:
            raise ArgumentError(f"action_bound 必须为正，实际 {action_bound}")
        self.walls = []
        for wall in walls:
            p1, p2, thickness = wall
            p1 = as_vector(p1, 2, 'p1')
            p2 = as_vector(p2, 2, 'p2')
            if thickness <= 0:
                raise ArgumentError(f"墙厚度必须为正，实际 {thickness}")
            if np.allclose(p1, p2):
                raise ArgumentError("墙段两端点重合")
            self.walls.append((p1, p2, float(thickness)))
        self.stiffness = float(stiffness)
        self.step_scale = float(step_scale)
        self.softness = float(softness)
        self.center_smoothing = float(center_smoothing)
        self.end_smoothing = float(end_smoothing)
        self.action_bound = None if action_bound is None else float(action_bound)

        # 墙段按行堆叠，核函数一次处理所有墙
        starts = np.array([p1 for p1, _, _ in self.walls]).reshape(-1, 2)
        ends = np.array([p2 for _, p2, _ in self.walls]).reshape(-1, 2)
        self._start = starts
        self._length = np.linalg.norm(ends - starts, axis=1)
        self._direction = (ends - starts) / self._length[:, None] if self.walls else np.zeros((0, 2))
        self._thickness = np.array([thickness for _, _, thickness in self.walls])
        self._outer_dir = self._direction[:, :, None] * self._direction[:, None, :]

    def _displacement(self, actions):
        """返回 d(a) 及其逐元素导数"""
        if self.action_bound is None:
            return actions, np.ones_like(actions)
        squashed = np.tanh(actions / self.action_bound)
        return self.action_bound * squashed, 1.0 - squashed ** 2

    def _kernel(self, states, actions):
        """逐行计算下一状态、∂s'/∂y（即 I − ∇²Φ，对称）(N, 2, 2) 与 d'(a)"""
        disp, disp_grad = self._displacement(actions)
        y = states + self.step_scale * disp
        jac = np.broadcast_to(np.eye(2), (y.shape[0], 2, 2)).copy()
        if not self.walls:
            return y, jac, disp_grad

        omega, tau = self.end_smoothing, self.softness
        u = self._direction[None]
        # (N, W, 2)：每行对每面墙
        rel = y[:, None, :] - self._start[None]
        t = rel[..., 0] * u[..., 0] + rel[..., 1] * u[..., 1]
        beyond = (t - self._length) / omega
        t_smooth = t - omega * np.logaddexp(0.0, beyond) + omega * np.logaddexp(0.0, -t / omega)
        lower, upper = expit(t / omega), expit(beyond)
        # weight = dt̃/dt，墙段内部≈1，端点外≈0
        weight = lower - upper
        weight_grad = (lower * (1.0 - lower) - upper * (1.0 - upper)) / omega

        r = rel - t_smooth[..., None] * u
        along = r[..., 0] * u[..., 0] + r[..., 1] * u[..., 1]
        d = np.sqrt(r[..., 0] ** 2 + r[..., 1] ** 2 + self.center_smoothing ** 2)
        # grad_d = ∇_y d_ε
        grad_d = (r - (weight * along)[..., None] * u) / d[..., None]

        z = (self._thickness - d) / tau
        sig = expit(z)
        pen = tau * np.logaddexp(0.0, z)
        push = self.stiffness * pen * sig
        out = y + np.sum(push[..., None] * grad_d, axis=1)

        # d(push)/dd = −κ(σ² + p̃σ(1−σ)/τ)
        gain = self.stiffness * (sig ** 2 + pen * sig * (1.0 - sig) / tau)
        bend = weight + along * weight_grad + weight * (1.0 - weight)
        outer = grad_d[..., :, None] * grad_d[..., None, :]
        proj = np.eye(2) - bend[..., None, None] * self._outer_dir[None]
        jac += np.sum(-gain[..., None, None] * outer + (push / d)[..., None, None] * (proj - outer), axis=1)
        return out, jac, disp_grad

    def forward_rows(self, states, actions):
        out, _, _ = self._kernel(states, actions)
        return out

    def vjp_state_rows(self, states, actions, cotangents):
        _, jac, _ = self._kernel(states, actions)
        # 雅可比对称，Jᵀc = Jc
        return np.sum(jac * cotangents[:, None, :], axis=-1)

    def vjp_action_rows(self, states, actions, cotangents):
        _, jac, disp_grad = self._kernel(states, actions)
        return self.step_scale * disp_grad * np.sum(jac * cotangents[:, None, :], axis=-1)

    def linearize_rows(self, states, actions):
        out, jac, disp_grad = self._kernel(states, actions)
        return out, jac, jac * (self.step_scale * disp_grad)[:, None, :]

    def describe(self):
        return {
            'config': {
                'walls': [[p1.tolist(), p2.tolist(), thickness] for p1, p2, thickness in self.walls],
                'stiffness': self.stiffness,
                'step_scale': self.step_scale,
                'softness': self.softness,
                'center_smoothing': self.center_smoothing,
                'end_smoothing': self.end_smoothing,
                'action_bound': self.action_bound,
            },
            'parameters': np.zeros(0),
        }

    @classmethod
    def from_description(cls, config, parameters=None):
        return cls(**config)
