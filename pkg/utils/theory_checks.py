"""
理论结论的数值检查

每个检查返回统一格式的报告 {check_name, status, observed, bound, margin, details}，
margin ≥ 0 表示通过。蒙特卡洛检查按固定分块使用派生随机流，归约顺序固定，
统计判据统一为 3 倍标准误。
"""
import logging

import numpy as np
from scipy.integrate import quad
from scipy.linalg import solve_discrete_lyapunov
from scipy.optimize import brentq
from scipy.special import gammaln
from scipy.stats import norm

from config import NumericsConfig
from models.base import rollout, rollout_batch
from models.linear import LinearModel
from numerics import ArgumentError, RngStream, as_vector, parallel_map
from utils.linear_theory import (
    LinearPlanSystem, smoothness_report, stopgrad_contraction_check,
)

theory_logger = logging.getLogger('theory')

SIGMA_LEVEL = NumericsConfig.MC_SIGMA_LEVEL


def make_report(check_name, passed, observed, bound, margin, **details):
    return {
        'check_name': check_name,
        'status': 'pass' if passed else 'fail',
        'observed': float(observed),
        'bound': float(bound),
        'margin': float(margin),
        'details': details,
    }


def _chunk_sizes(total, chunk):
    sizes = [chunk] * (total // chunk)
    if total % chunk:
        sizes.append(total % chunk)
    return sizes


# ----------------------------------------------------------------------
# 高斯平滑
# ----------------------------------------------------------------------
def gaussian_norm_mean(d):
    """c_d = E‖Z‖ = √2·Γ((d+1)/2)/Γ(d/2)，Z ~ N(0, I_d)"""
    if d < 1:
        raise ArgumentError(f"维度必须 ≥ 1，实际 {d}")
    return float(np.sqrt(2.0) * np.exp(gammaln((d + 1) / 2.0) - gammaln(d / 2.0)))


def clamp_test_function(low=-1.0, high=1.0):
    """clamp(x, low, high) 及其解析平滑导数 Φ((high − x)/σ) − Φ((low − x)/σ)"""

    def fn(x):
        return np.clip(x[..., 0], low, high)

    def grad(x):
        inside = (x[..., 0] > low) & (x[..., 0] < high)
        return inside.astype(np.float64)[..., None]

    def smoothed_grad(x, sigma):
        x = np.asarray(x, dtype=np.float64).reshape(-1)[0]
        return np.array([norm.cdf((high - x) / sigma) - norm.cdf((low - x) / sigma)])

    return {
        'fn': fn, 'grad': grad, 'smoothed_grad': smoothed_grad,
        'lipschitz': 1.0, 'sup_norm': max(abs(low), abs(high)), 'dim': 1,
    }


def smoothed_gradient_estimate(test_fn, x, sigma, samples, rng, grad_fn=None):
    """
    ∇L_σ(x) 的蒙特卡洛估计，返回 (均值向量, 逐坐标标准误)

    给出 grad_fn 时对扰动点梯度取平均（路径估计）；
    否则使用带基线的得分函数估计 E[(L(x+σZ) − L(x))Z]/σ
    """
    x = as_vector(x, name='x')
    z = rng.standard_normal((samples, x.shape[0]))
    points = x + sigma * z
    if grad_fn is not None:
        draws = grad_fn(points)
    else:
        baseline = test_fn(x[None, :])
        draws = (test_fn(points) - baseline)[:, None] * z / sigma
    mean = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(samples) if samples > 1 else np.zeros_like(mean)
    return mean, stderr


def gaussian_smoothing_check(test_fn, sigma, samples, rng, points=None, use_pathwise=True):
    """
    在检查点上检查 ‖∇L_σ‖ ≤ min(Lip(L), c_d/σ·‖L‖_∞) + 3 标准误；
    有解析平滑导数时同时检查蒙特卡洛均值与其偏差不超过 3 标准误
    """
    if sigma <= 0:
        raise ArgumentError(f"sigma 必须为正，实际 {sigma}")
    dim = test_fn['dim']
    c_d = gaussian_norm_mean(dim)
    bound = min(test_fn['lipschitz'], c_d / sigma * test_fn['sup_norm'])
    if points is None:
        points = np.linspace(-1.5, 1.5, 13)[:, None] if dim == 1 else rng.standard_normal((8, dim))
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))

    worst_margin = np.inf
    worst_z = 0.0
    observed_max = 0.0
    for i, x in enumerate(points):
        grad_fn = test_fn['grad'] if use_pathwise else None
        mean, stderr = smoothed_gradient_estimate(test_fn['fn'], x, sigma, samples, rng.derive('point', i), grad_fn)
        norm_est = float(np.linalg.norm(mean))
        se_norm = float(np.linalg.norm(stderr))
        observed_max = max(observed_max, norm_est)
        worst_margin = min(worst_margin, bound + SIGMA_LEVEL * se_norm - norm_est)
        if test_fn.get('smoothed_grad') is not None:
            exact = test_fn['smoothed_grad'](x, sigma)
            # 全部样本相同时标准误为 0，以 1/samples 作为分辨率下限
            deviation = np.abs(mean - exact) / np.maximum(stderr, 1.0 / samples)
            worst_z = max(worst_z, float(np.max(deviation)))

    passed = worst_margin >= 0 and worst_z <= SIGMA_LEVEL
    return make_report(
        'gaussian_smoothing', passed, observed_max, bound, worst_margin,
        c_d=c_d, sigma=sigma, samples=samples, max_z_vs_analytic=worst_z,
    )


# ----------------------------------------------------------------------
# OU 管道
# ----------------------------------------------------------------------
def ou_tube_check(eta_s, sigma, steps, burn_in, rng, mu=0.0, dim=1, chains=1000, workers=1,
                  tolerance=0.05, chunk=250):
    """
    模拟 s^{k+1} = (1 − 2η_s)s^k + 2η_s μ + σξ，比较平稳协方差与 σ²/(4η_s(1 − η_s))

    chains 条链各走 steps 步，丢弃前 burn_in 步；链按 chunk 分块，每块独立派生随机流
    """
    if not 0 < eta_s < 1:
        raise ArgumentError(f"eta_s 必须在 (0, 1) 内，实际 {eta_s}")
    if steps <= burn_in:
        raise ArgumentError("steps 必须大于 burn_in")
    if sigma < 0:
        raise ArgumentError(f"sigma 必须非负，实际 {sigma}")
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (dim,))
    rho = 1.0 - 2.0 * eta_s

    def simulate(job):
        index, size = job
        stream = rng.derive('ou', index)
        s = np.broadcast_to(mu, (size, dim)).copy()
        total = np.zeros(dim)
        second = np.zeros((dim, dim))
        count = 0
        for k in range(steps):
            s = rho * s + 2.0 * eta_s * mu + sigma * stream.standard_normal((size, dim))
            if k >= burn_in:
                dev = s - mu
                total += dev.sum(axis=0)
                second += dev.T @ dev
                count += size
        return total, second, count

    jobs = list(enumerate(_chunk_sizes(chains, chunk)))
    parts = parallel_map(simulate, jobs, workers, purpose='theory')
    total = sum(p[0] for p in parts)
    second = sum(p[1] for p in parts)
    count = sum(p[2] for p in parts)
    mean_dev = total / count
    covariance = second / count - np.outer(mean_dev, mean_dev)

    predicted = sigma ** 2 / (4.0 * eta_s * (1.0 - eta_s))
    lyapunov = solve_discrete_lyapunov(rho * np.eye(dim), sigma ** 2 * np.eye(dim))
    observed = float(np.mean(np.diag(covariance)))
    if predicted > 0:
        rel_error = abs(observed - predicted) / predicted
        margin = tolerance - rel_error
    else:
        rel_error = observed
        margin = -observed
    return make_report(
        'ou_tube', margin >= 0, observed, predicted, margin,
        eta_s=eta_s, sigma=sigma, samples=count, relative_error=rel_error,
        lyapunov_diag=float(np.mean(np.diag(lyapunov))),
        covariance=covariance.tolist(), mean_offset=mean_dev.tolist(),
    )


# ----------------------------------------------------------------------
# 管道中心漂移
# ----------------------------------------------------------------------
def tube_drift_check(model, gamma, eta_a, steps, rng, g=None, s_bar=None, a0=None,
                     tube_sigma=0.1, samples=4000):
    """
    截断梯度动作更新在零均值管道残差下的中心漂移

    μ^{k+1} = μ^k − αγP(μ^k − g) + αPu^k，α = 2η_a，P = BBᵀ；
    比较 μ 的经验均值与平均递推 E[μ^{k+1}] = (I − αγP)E[μ^k] + αγPg
    """
    if not isinstance(model, LinearModel):
        raise ArgumentError("tube_drift_check 只支持 LinearModel")
    n, k = model.state_dim, model.action_dim
    alpha = 2.0 * eta_a
    P = model.B @ model.B.T
    lam_max = float(np.linalg.eigvalsh(P)[-1])
    if not alpha * gamma * lam_max < 1.0:
        raise ArgumentError(f"收缩前提不成立: αγλ_max(BBᵀ) = {alpha * gamma * lam_max:.4f} ≥ 1")
    g = np.zeros(n) if g is None else as_vector(g, n, 'g')
    s_bar = np.zeros(n) if s_bar is None else as_vector(s_bar, n, 's_bar')
    a0 = np.zeros(k) if a0 is None else as_vector(a0, k, 'a0')

    actions = np.tile(a0, (samples, 1))
    states = np.tile(s_bar, (samples, 1))
    mu = model.forward_rows(states, actions)
    predicted = mu[0].copy()
    history = []
    stream = rng.derive('tube-drift')
    for _ in range(steps):
        residual = tube_sigma * stream.standard_normal((samples, n))
        # s_{t+1} = μ + u，故 F − s_{t+1} = −u
        cot = 2.0 * (-residual + gamma * (mu - g))
        actions = actions - eta_a * model.vjp_action_rows(states, actions, cot)
        mu = model.forward_rows(states, actions)
        predicted = predicted - alpha * gamma * P @ (predicted - g)
        mean = mu.mean(axis=0)
        stderr = mu.std(axis=0, ddof=1) / np.sqrt(samples)
        history.append((mean, stderr, predicted.copy()))

    final_mean, final_se, final_pred = history[-1]
    gap = np.abs(final_mean - final_pred)
    z = np.where(gap > 0, gap / np.maximum(final_se, 1e-300), 0.0)
    observed = float(np.max(z))
    contraction = [float(np.linalg.norm(h[2] - g)) for h in history]
    return make_report(
        'tube_drift', observed <= SIGMA_LEVEL, observed, SIGMA_LEVEL, SIGMA_LEVEL - observed,
        alpha=alpha, gamma=gamma, steps=steps, samples=samples,
        empirical_mean=[h[0].tolist() for h in history],
        predicted_mean=[h[2].tolist() for h in history],
        predicted_distance=contraction,
    )


# ----------------------------------------------------------------------
# 带噪展开的协方差
# ----------------------------------------------------------------------
def covariance_recursion(model, s0, actions, sigma_env):
    """Σ_{t+1} = G_tΣ_tG_tᵀ + σ²I，G_t 为沿无噪展开的状态雅可比（线性模型下精确）"""
    traj = rollout(model, s0, actions, check=False)
    n = model.state_dim
    sigmas = [np.zeros((n, n))]
    for t in range(traj.horizon):
        G, _ = model.jacobians(traj.states[t], traj.actions[t])
        sigmas.append(G @ sigmas[-1] @ G.T + sigma_env ** 2 * np.eye(n))
    return sigmas


def rollout_covariance_check(model, sigma_env, T, samples, rng, s0=None, actions=None, tolerance=0.05):
    """带噪展开 s_{t+1} = F(s_t, a_t) + σζ 的逐步经验协方差与递推比较，报告最大相对偏差"""
    if samples < 1000:
        raise ArgumentError(f"samples 至少 1000，实际 {samples}")
    n, k = model.state_dim, model.action_dim
    s0 = np.zeros(n) if s0 is None else as_vector(s0, n, 's0')
    actions = np.zeros((T, k)) if actions is None else np.array(actions, dtype=np.float64, ndmin=2)
    recursion = covariance_recursion(model, s0, actions, sigma_env)

    noise = sigma_env * rng.derive('rollout-noise').standard_normal((samples, T, n))
    batch_actions = np.broadcast_to(actions, (samples, T, k))
    states = rollout_batch(model, s0, batch_actions, state_noise=noise)

    max_dev = 0.0
    empirical = []
    for t in range(T + 1):
        cov = np.cov(states[:, t].T, bias=False).reshape(n, n) if sigma_env > 0 else np.zeros((n, n))
        empirical.append(cov)
        ref = np.linalg.norm(recursion[t])
        if ref > 0:
            max_dev = max(max_dev, float(np.linalg.norm(cov - recursion[t]) / ref))
        else:
            max_dev = max(max_dev, float(np.linalg.norm(cov)))
    traces = [float(np.trace(s)) for s in recursion]
    return make_report(
        'rollout_covariance', max_dev <= tolerance, max_dev, tolerance, tolerance - max_dev,
        sigma_env=sigma_env, horizon=T, samples=samples, recursion_trace=traces,
        empirical_trace=[float(np.trace(c)) for c in empirical],
    )


# ----------------------------------------------------------------------
# 玻尔兹曼联系（一维双井）
# ----------------------------------------------------------------------
def double_well(s, tilt):
    return (s ** 2 - 1.0) ** 2 + tilt * s


def _well_variance(beta, tilt, side):
    low, high = (0.0, 3.0) if side > 0 else (-3.0, 0.0)
    weight = lambda s: np.exp(-beta * double_well(s, tilt))
    z, _ = quad(weight, low, high)
    m1, _ = quad(lambda s: s * weight(s), low, high)
    m2, _ = quad(lambda s: s * s * weight(s), low, high)
    mean = m1 / z
    return m2 / z - mean ** 2


def boltzmann_double_well_check(rng, tilt=0.25, beta=3.0, eta=0.005, chains=2000, steps=20000,
                                burn_in=2000, tolerance=0.2, workers=1, chunk=500):
    """
    状态与动作上的完整朗之万: L(s, a) = w(s) + (a − s)²，w(s) = (s² − 1)² + h·s

    噪声强度按名义 β 设置（σ² = 2η/β）；从右井内方差反解 β（积分 + 求根），
    用拟合的 β 预测两井质量比 ∫_{s<0}e^{−βw} / ∫_{s>0}e^{−βw}，与经验比较
    """
    noise = np.sqrt(2.0 * eta / beta)

    def simulate(job):
        index, size = job
        stream = rng.derive('double-well', index)
        s = np.where(np.arange(size) % 2 == 0, -1.0, 1.0)
        a = s.copy()
        left = 0
        right_values = []
        for k in range(steps):
            grad_s = 4.0 * s * (s * s - 1.0) + tilt - 2.0 * (a - s)
            grad_a = 2.0 * (a - s)
            xi = stream.standard_normal((2, size))
            s = s - eta * grad_s + noise * xi[0]
            a = a - eta * grad_a + noise * xi[1]
            if k >= burn_in:
                left += int(np.count_nonzero(s < 0))
                right_values.append(s[s > 0])
        right = np.concatenate(right_values)
        return left, right.size, float(right.sum()), float((right * right).sum())

    jobs = list(enumerate(_chunk_sizes(chains, chunk)))
    parts = parallel_map(simulate, jobs, workers, purpose='theory')
    left = sum(p[0] for p in parts)
    right = sum(p[1] for p in parts)
    s1 = sum(p[2] for p in parts)
    s2 = sum(p[3] for p in parts)
    right_var = s2 / right - (s1 / right) ** 2

    fitted_beta = brentq(lambda b: _well_variance(b, tilt, +1) - right_var, 0.05, 200.0)
    z_left, _ = quad(lambda s: np.exp(-fitted_beta * double_well(s, tilt)), -3.0, 0.0)
    z_right, _ = quad(lambda s: np.exp(-fitted_beta * double_well(s, tilt)), 0.0, 3.0)
    predicted = z_left / z_right
    observed = left / right
    rel_error = abs(observed - predicted) / predicted
    return make_report(
        'boltzmann_double_well', rel_error <= tolerance, observed, predicted, tolerance - rel_error,
        nominal_beta=beta, fitted_beta=fitted_beta, relative_error=rel_error, tilt=tilt,
    )


# ----------------------------------------------------------------------
# 线性系统批量检查
# ----------------------------------------------------------------------
def random_system(rng, n, m, T, scale=1.0):
    A = scale * rng.standard_normal((n, n)) / np.sqrt(n)
    B = rng.standard_normal((n, m)) / np.sqrt(n)
    return LinearPlanSystem(A, B, T)


def lifted_smoothness_check(rng, systems=50, horizons=(2, 10, 40), max_dim=4):
    """随机系统上 λ_max(H_L) ≤ 6(1 + ‖A‖² + ‖B‖²)，且同一 (A, B) 跨 T 变化小于 2 倍"""
    violations = 0
    worst_ratio = 0.0
    worst_spread = 1.0
    for i in range(systems):
        stream = rng.derive('lifted-system', i)
        n, m = (int(x) for x in 1 + np.floor(max_dim * stream.uniform(size=2)))
        base = random_system(stream, n, m, 2)
        values = []
        for T in horizons:
            report = smoothness_report(LinearPlanSystem(base.A, base.B, T))
            values.append(report.L_lifted)
            worst_ratio = max(worst_ratio, report.L_lifted / report.upper_bound_lifted)
            if not report.lifted_bound_holds:
                violations += 1
        worst_spread = max(worst_spread, max(values) / min(values))
    passed = violations == 0 and worst_spread < 2.0
    return make_report(
        'lifted_smoothness_bound', passed, worst_ratio, 1.0, 1.0 - worst_ratio,
        systems=systems, violations=violations, max_spread_across_T=worst_spread,
    )


def shooting_explosion_check(lam=1.5, horizons=(5, 10, 20), slope_tolerance=0.1):
    """|λ| > 1 的认证模态下 λ_max(H_S) ≥ 2μ²|λ|^{2(T−1)}，对数斜率接近 2·log|λ|"""
    A = np.diag([lam, 0.5])
    B = np.eye(2)
    mode = (np.array([1.0, 0.0]), np.array([1.0, 0.0]), lam)
    ratios, logs = [], []
    for T in horizons:
        report = smoothness_report(LinearPlanSystem(A, B, T), mode)
        ratios.append(report.L_shooting / report.lower_bound_shooting)
        logs.append(np.log(report.L_shooting))
    slope = float(np.polyfit(np.asarray(horizons, dtype=np.float64), logs, 1)[0])
    expected = 2.0 * np.log(abs(lam))
    slope_error = abs(slope - expected) / expected
    worst = float(min(ratios))
    passed = worst >= 1.0 - 1e-12 and slope_error <= slope_tolerance
    return make_report(
        'shooting_explosion', passed, worst, 1.0, min(worst - 1.0, slope_tolerance - slope_error),
        fitted_slope=slope, expected_slope=expected, horizons=list(horizons),
    )


def contraction_battery(rng, systems=10, T=8, slack=0.02):
    """随机列满秩 B 的系统上，截断梯度迭代的误差比 ≤ q + slack"""
    worst = -np.inf
    details = []
    for i in range(systems):
        stream = rng.derive('contraction', i)
        n, m = 3, 2
        sys = random_system(stream, n, m, T, scale=0.8)
        betas = 0.5 + 1.5 * stream.uniform(size=T)
        report = stopgrad_contraction_check(sys, betas, rng=stream.derive('start'))
        excess = report['observed_ratio'] - report['q']
        worst = max(worst, excess)
        details.append({'q': report['q'], 'observed': report['observed_ratio'],
                        'lower_triangular': report['block_lower_triangular']})
    passed = worst <= slack and all(d['lower_triangular'] for d in details)
    return make_report('stopgrad_contraction', passed, worst, slack, slack - worst, systems=details)


# ----------------------------------------------------------------------
# 汇总
# ----------------------------------------------------------------------
CHECK_NAMES = (
    'lifted_smoothness_bound', 'shooting_explosion', 'stopgrad_contraction', 'ou_tube',
    'gaussian_smoothing', 'tube_drift', 'rollout_covariance', 'boltzmann_double_well',
)


def run_theory_checks(seed=0, names=None, quick=False, workers=1):
    """
    依次运行理论检查，返回报告列表

    quick=True 时缩小蒙特卡洛规模（用于冒烟测试，不保证统计判据）
    """
    rng = RngStream(seed, 0)
    names = list(names or CHECK_NAMES)
    unknown = sorted(set(names) - set(CHECK_NAMES))
    if unknown:
        raise ArgumentError(f"未知的理论检查: {unknown}，可选 {list(CHECK_NAMES)}")
    scale = 0.01 if quick else 1.0
    reports = []
    for name in names:
        stream = rng.derive(name)
        if name == 'lifted_smoothness_bound':
            reports.append(lifted_smoothness_check(stream, systems=5 if quick else 50))
        elif name == 'shooting_explosion':
            reports.append(shooting_explosion_check())
        elif name == 'stopgrad_contraction':
            reports.append(contraction_battery(stream, systems=2 if quick else 10))
        elif name == 'ou_tube':
            sub = []
            for eta_s in (0.1, 0.25, 0.5):
                for sigma in (0.05, 0.2):
                    sub.append(ou_tube_check(eta_s, sigma, steps=1200 if not quick else 300, burn_in=200,
                                             rng=stream.derive(eta_s, sigma),
                                             chains=max(10, int(1000 * scale)), workers=workers))
            worst = min(sub, key=lambda r: r['margin'])
            reports.append(make_report(
                'ou_tube', all(r['status'] == 'pass' for r in sub), worst['observed'], worst['bound'],
                worst['margin'], cells=[{k: r['details'][k] for k in ('eta_s', 'sigma', 'relative_error')}
                                        for r in sub],
            ))
        elif name == 'gaussian_smoothing':
            reports.append(gaussian_smoothing_check(clamp_test_function(), 0.1,
                                                    max(100, int(10_000 * scale)), stream))
        elif name == 'tube_drift':
            model = LinearModel(np.zeros((2, 2)), np.eye(2))
            reports.append(tube_drift_check(model, gamma=1.0, eta_a=0.05, steps=20, rng=stream,
                                            g=np.array([1.0, -1.0]), samples=max(200, int(4000 * scale))))
        elif name == 'rollout_covariance':
            model = LinearModel(np.eye(2), np.eye(2))
            reports.append(rollout_covariance_check(model, 0.1, 10, max(1000, int(10_000 * scale)), stream))
        elif name == 'boltzmann_double_well':
            reports.append(boltzmann_double_well_check(
                stream, chains=max(20, int(2000 * scale)), steps=20000 if not quick else 3000,
                burn_in=2000 if not quick else 500, workers=workers,
            ))
        theory_logger.info(f"理论检查 {name}: {reports[-1]['status']} (margin {reports[-1]['margin']:.4g})")
    return reports
