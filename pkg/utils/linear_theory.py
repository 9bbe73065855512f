"""
线性系统 s_{t+1} = A s_t + B a_t 下的规划理论构造

- 能控性矩阵 C_T 与 shooting Hessian H_S = 2 C_Tᵀ C_T
- lifted 残差矩阵 M、右端 b 与 Hessian H_L = 2 MᵀM
- 截断梯度迭代的仿射映射、分块 Hessian H_t 与收缩检查
"""
import logging
from dataclasses import dataclass

import numpy as np

from config import NumericsConfig
from numerics import ArgumentError, as_matrix, as_vector, max_eig_sym, spectral_norm

theory_logger = logging.getLogger('theory')


@dataclass
class LinearPlanSystem:
    A: np.ndarray
    B: np.ndarray
    T: int
    s0: np.ndarray = None
    g: np.ndarray = None

    def __post_init__(self):
        self.A = as_matrix(self.A, 'A')
        self.B = as_matrix(self.B, 'B')
        if self.A.shape[0] != self.A.shape[1]:
            raise ArgumentError(f"A 必须是方阵，实际 {self.A.shape}")
        if self.B.shape[0] != self.A.shape[0]:
            raise ArgumentError(f"B 行数必须为 {self.A.shape[0]}，实际 {self.B.shape[0]}")
        if int(self.T) != self.T or self.T < 1:
            raise ArgumentError(f"T 必须是 ≥ 1 的整数，实际 {self.T}")
        self.T = int(self.T)
        n = self.A.shape[0]
        self.s0 = np.zeros(n) if self.s0 is None else as_vector(self.s0, n, 's0')
        self.g = np.zeros(n) if self.g is None else as_vector(self.g, n, 'g')

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @classmethod
    def from_model(cls, model, T, s0=None, g=None):
        """从 LinearModel 构造（偏置 c 必须为 0）"""
        if np.any(model.c):
            raise ArgumentError("理论构造只支持 c = 0 的线性模型")
        return cls(model.A, model.B, T, s0, g)


def controllability(sys):
    """C_T = [A^{T−1}B, A^{T−2}B, …, B]，形状 n × (mT)"""
    blocks = []
    power_b = sys.B.copy()
    for _ in range(sys.T):
        blocks.append(power_b)
        power_b = sys.A @ power_b
    return np.hstack(blocks[::-1])


def terminal_state(sys, actions):
    """A^T s0 + C_T·vec(a)"""
    actions = np.array(actions, dtype=np.float64, ndmin=2)
    if actions.shape != (sys.T, sys.m):
        raise ArgumentError(f"动作形状错误: 期望 {(sys.T, sys.m)}，实际 {actions.shape}")
    return np.linalg.matrix_power(sys.A, sys.T) @ sys.s0 + controllability(sys) @ actions.ravel()


def shooting_hessian(sys):
    c_t = controllability(sys)
    return 2.0 * c_t.T @ c_t


def least_squares_plan(sys):
    """
    shooting 问题的最小范数最小二乘解

    返回 (actions (T, m), 最优值 ‖C_T a* − (g − A^T s0)‖²)
    """
    c_t = controllability(sys)
    target = sys.g - np.linalg.matrix_power(sys.A, sys.T) @ sys.s0
    solution, *_ = np.linalg.lstsq(c_t, target, rcond=None)
    residual = c_t @ solution - target
    return solution.reshape(sys.T, sys.m), float(residual @ residual)


def lifted_matrix(sys):
    """
    lifted 残差的线性形式 ‖Mz − b‖²，z = (s_1..s_{T−1}, a_0..a_{T−1})

    行块: s_1 − B a_0 = A s0；A s_t + B a_t − s_{t+1} = 0；−A s_{T−1} − B a_{T−1} = −g
    """
    if sys.T < 2:
        raise ArgumentError("T = 1 时没有自由状态，lifted 矩阵不存在")
    n, m, T = sys.n, sys.m, sys.T
    n_states = n * (T - 1)
    M = np.zeros((n * T, n_states + m * T))
    b = np.zeros(n * T)
    eye = np.eye(n)

    def s_cols(t):
        return slice((t - 1) * n, t * n)

    def a_cols(t):
        return slice(n_states + t * m, n_states + (t + 1) * m)

    M[0:n, s_cols(1)] = eye
    M[0:n, a_cols(0)] = -sys.B
    b[0:n] = sys.A @ sys.s0
    for t in range(1, T - 1):
        rows = slice(t * n, (t + 1) * n)
        M[rows, s_cols(t)] = sys.A
        M[rows, a_cols(t)] = sys.B
        M[rows, s_cols(t + 1)] = -eye
    rows = slice((T - 1) * n, T * n)
    M[rows, s_cols(T - 1)] = -sys.A
    M[rows, a_cols(T - 1)] = -sys.B
    b[rows] = -sys.g
    return M, b


def lifted_hessian(sys):
    M, _ = lifted_matrix(sys)
    return 2.0 * M.T @ M


def lifted_optimum(sys):
    """min ‖Mz − b‖² 的最小范数解，返回 (z, 最优值)"""
    M, b = lifted_matrix(sys)
    z, *_ = np.linalg.lstsq(M, b, rcond=None)
    residual = M @ z - b
    return z, float(residual @ residual)


def interleave_permutation(n, m, T, terminal_state=False):
    """
    从“状态在前、动作在后”的排列到时间交错排列 (s_1, a_0, s_2, a_1, …) 的下标

    terminal_state=False 时状态为 s_1..s_{T−1}（lifted 矩阵的排列），最后一个动作排在末尾；
    为 True 时状态为 s_1..s_T。返回 perm，使 z_interleaved = z_stacked[perm]
    """
    n_states = T if terminal_state else T - 1
    offset = n * n_states
    perm = []
    for t in range(T):
        if t < n_states:
            perm.extend(range(t * n, (t + 1) * n))
        perm.extend(range(offset + t * m, offset + (t + 1) * m))
    return np.array(perm, dtype=int)


@dataclass
class SmoothnessReport:
    L_shooting: float
    L_lifted: float
    lower_bound_shooting: float
    upper_bound_lifted: float
    horizon: int

    @property
    def shooting_bound_holds(self):
        return self.lower_bound_shooting is None or self.L_shooting >= self.lower_bound_shooting * (1 - 1e-12)

    @property
    def lifted_bound_holds(self):
        return self.L_lifted is None or self.L_lifted <= self.upper_bound_lifted * (1 + 1e-12)

    def to_dict(self):
        return {
            'horizon': self.horizon,
            'L_shooting': self.L_shooting,
            'L_lifted': self.L_lifted,
            'lower_bound_shooting': self.lower_bound_shooting,
            'upper_bound_lifted': self.upper_bound_lifted,
        }


def certify_mode(sys, v, w, lam, mu=None):
    """
    认证 v 为 A 的单位左特征向量（特征值 λ），w 为单位动作方向，返回 μ = |⟨v, Bw⟩|

    任何一项不满足 1e-8 容差即抛出 ArgumentError
    """
    tol = NumericsConfig.EIGENPAIR_TOLERANCE
    v = as_vector(v, sys.n, 'v')
    w = as_vector(w, sys.m, 'w')
    lam = float(lam)
    if abs(np.linalg.norm(v) - 1.0) > tol or abs(np.linalg.norm(w) - 1.0) > tol:
        raise ArgumentError("v 与 w 必须是单位向量")
    defect = float(np.linalg.norm(sys.A.T @ v - lam * v))
    if defect > tol:
        raise ArgumentError(f"特征对认证失败: ‖Aᵀv − λv‖ = {defect:.3e}")
    computed = abs(float(v @ (sys.B @ w)))
    if mu is not None and abs(computed - float(mu)) > tol:
        raise ArgumentError(f"μ 与 |⟨v, Bw⟩| = {computed} 不一致")
    if computed <= 0:
        raise ArgumentError("μ = |⟨v, Bw⟩| 必须为正")
    return computed


def smoothness_report(sys, mode_direction=None):
    """
    精确计算 λ_max(H_S)、λ_max(H_L) 以及两条界:
    下界 2μ²|λ|^{2(T−1)}（给出特征方向时），上界 6(1 + ‖A‖² + ‖B‖²)
    """
    L_shooting = max_eig_sym(shooting_hessian(sys))
    L_lifted = max_eig_sym(lifted_hessian(sys)) if sys.T >= 2 else None
    upper = 6.0 * (1.0 + spectral_norm(sys.A) ** 2 + spectral_norm(sys.B) ** 2)
    lower = None
    if mode_direction is not None:
        v, w, lam = mode_direction[:3]
        mu = mode_direction[3] if len(mode_direction) > 3 else None
        mu = certify_mode(sys, v, w, lam, mu)
        lower = 2.0 * mu ** 2 * abs(float(lam)) ** (2 * (sys.T - 1))
    report = SmoothnessReport(L_shooting, L_lifted, lower, upper, sys.T)
    theory_logger.debug(f"光滑性报告: {report.to_dict()}")
    return report


# ----------------------------------------------------------------------
# 截断梯度迭代（状态 s_1..s_T 全部自由，逐步目标系数 β_t）
# ----------------------------------------------------------------------
def block_hessians(B, betas):
    """H_t = 2[[I, −B], [−Bᵀ, (1+β_t)BᵀB]]，变量为 (s_{t+1}, a_t)"""
    B = as_matrix(B, 'B')
    n = B.shape[0]
    blocks = []
    for beta in np.asarray(betas, dtype=np.float64):
        blocks.append(2.0 * np.block([
            [np.eye(n), -B],
            [-B.T, (1.0 + beta) * (B.T @ B)],
        ]))
    return blocks


def stopgrad_affine_map(sys, betas, eta, ordering='interleaved'):
    """
    截断梯度下降的一步 z ← Jz + c

    interleaved 排列为 (s_1, a_0, s_2, a_1, …, s_T, a_{T−1})；
    stacked 排列为 (s_1..s_T, a_0..a_{T−1})
    """
    betas = as_vector(betas, sys.T, 'betas')
    if np.any(betas < 0):
        raise ArgumentError("β_t 必须非负")
    if eta <= 0:
        raise ArgumentError(f"eta 必须为正，实际 {eta}")
    n, m, T = sys.n, sys.m, sys.T
    width = n + m
    dim = width * T
    hessian = np.zeros((dim, dim))
    h = np.zeros(dim)
    A, B = sys.A, sys.B
    for t, H_t in enumerate(block_hessians(B, betas)):
        block = slice(t * width, (t + 1) * width)
        hessian[block, block] = H_t
        coupling = np.vstack([-2.0 * A, 2.0 * (1.0 + betas[t]) * (B.T @ A)])
        h[block] = np.concatenate([np.zeros(n), -2.0 * betas[t] * (B.T @ sys.g)])
        if t == 0:
            h[block] += coupling @ sys.s0
        else:
            prev_state = slice((t - 1) * width, (t - 1) * width + n)
            hessian[block, prev_state] = coupling
    J = np.eye(dim) - eta * hessian
    c = -eta * h
    if ordering == 'stacked':
        perm = interleave_permutation(n, m, T, terminal_state=True)
        inverse = np.argsort(perm)
        J = J[np.ix_(inverse, inverse)]
        c = c[inverse]
    elif ordering != 'interleaved':
        raise ArgumentError(f"未知的排列: {ordering}")
    return J, c


def is_block_lower_triangular(J, width):
    dim = J.shape[0]
    for start in range(0, dim, width):
        if np.any(J[start:start + width, start + width:]):
            return False
    return True


def stopgrad_contraction_check(sys, betas, eta=None, rng=None, rel_tol=1e-10, max_iterations=200_000,
                               tail=10):
    """
    迭代截断梯度仿射映射并测量误差比 ‖z_{k+1} − z*‖ / ‖z_k − z*‖

    μ、L 取所有 H_t 特征值的最小 / 最大值，q = max{|1 − ημ|, |1 − ηL|}；
    默认 η = 1/L。z* 由 (I − J)z* = c 直接求解；误差降到初始的 rel_tol 倍时停止，
    取停止前最后 tail 个误差比的最大值作为观测收缩率
    """
    betas = as_vector(betas, sys.T, 'betas')
    eigen = np.concatenate([np.linalg.eigvalsh(H) for H in block_hessians(sys.B, betas)])
    mu, L = float(eigen.min()), float(eigen.max())
    if mu <= 0:
        raise ArgumentError("存在非正定的 H_t（需要 β_t > 0 且 B 列满秩）")
    if eta is None:
        eta = 1.0 / L
    if not 0 < eta < 2.0 / L:
        raise ArgumentError(f"步长 η = {eta} 不满足 0 < η < 2/L = {2.0 / L}")
    q = max(abs(1.0 - eta * mu), abs(1.0 - eta * L))

    J, c = stopgrad_affine_map(sys, betas, eta)
    width = sys.n + sys.m
    lower_triangular = is_block_lower_triangular(J, width)
    spectral_radius = float(np.max(np.abs(np.linalg.eigvals(J))))
    z_star = np.linalg.solve(np.eye(J.shape[0]) - J, c)

    z = np.zeros(J.shape[0]) if rng is None else rng.standard_normal(J.shape[0])
    error0 = float(np.linalg.norm(z - z_star))
    errors = [error0]
    iterations = 0
    while errors[-1] > rel_tol * error0 and iterations < max_iterations and errors[-1] > 0:
        z = J @ z + c
        errors.append(float(np.linalg.norm(z - z_star)))
        iterations += 1

    errors = np.array(errors)
    ratios = errors[1:] / np.where(errors[:-1] > 0, errors[:-1], np.inf)
    observed = float(np.max(ratios[-tail:])) if ratios.size else 0.0
    report = {
        'mu': mu,
        'L': L,
        'eta': eta,
        'q': q,
        'spectral_radius': spectral_radius,
        'observed_ratio': observed,
        'iterations': iterations,
        'block_lower_triangular': lower_triangular,
        'converged': bool(errors[-1] <= rel_tol * error0),
    }
    theory_logger.debug(f"截断梯度收缩检查: {report}")
    return report
