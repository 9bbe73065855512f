"""
损失景观切片
在中心点附近沿两个随机正交单位方向 u、v 取 grid×grid 网格评估损失
"""
import logging
import os

import numpy as np
import pandas as pd

from numerics import ArgumentError, as_vector, parallel_map

harness_logger = logging.getLogger('harness')


def random_orthonormal_pair(rng, dim):
    """两个随机正交单位向量（Gram-Schmidt 后再正交化一次）"""
    if dim < 2:
        raise ArgumentError(f"景观切片至少需要 2 维参数，实际 {dim}")
    u = rng.standard_normal(dim)
    u /= np.linalg.norm(u)
    v = rng.standard_normal(dim)
    for _ in range(2):
        v -= (v @ u) * u
        v /= np.linalg.norm(v)
    return u, v


def landscape_slice(loss, center, rng, grid, radius, workers=1):
    """
    返回 (field, alphas, betas, u, v)

    field[i, j] = loss(center + alphas[i]·u + betas[j]·v)，alphas = betas = linspace(−radius, radius, grid)
    参数只有 1 维时退化为沿 u = (1) 的线扫描，v = 0（每行常数）
    """
    if int(grid) != grid or grid < 3:
        raise ArgumentError(f"grid 必须是 ≥ 3 的整数，实际 {grid}")
    if radius < 0:
        raise ArgumentError(f"radius 必须非负，实际 {radius}")
    grid = int(grid)
    center = as_vector(center, name='center')
    if center.shape[0] == 0:
        raise ArgumentError("景观切片的中心点不能为空")
    if center.shape[0] == 1:
        harness_logger.warning("参数只有 1 维，景观切片退化为一维线扫描")
        u, v = np.ones(1), np.zeros(1)
    else:
        u, v = random_orthonormal_pair(rng, center.shape[0])
    alphas = np.linspace(-radius, radius, grid)
    betas = np.linspace(-radius, radius, grid)

    def evaluate_row(alpha):
        return [float(loss(center + alpha * u + beta * v)) for beta in betas]

    rows = parallel_map(evaluate_row, alphas, workers, purpose='landscape')
    field = np.array(rows, dtype=np.float64)
    harness_logger.info(
        f"景观切片完成: {grid}×{grid}, 半径 {radius}, 最小值 {np.min(field):.4e}, 最大值 {np.max(field):.4e}"
    )
    return field, alphas, betas, u, v


def landscape_frame(field, alphas, betas):
    """按行主序展开为 alpha,beta,loss 三列"""
    alpha_col, beta_col = np.meshgrid(alphas, betas, indexing='ij')
    return pd.DataFrame({
        'alpha': alpha_col.ravel(),
        'beta': beta_col.ravel(),
        'loss': np.asarray(field).ravel(),
    })


def write_landscape_csv(field, alphas, betas, path):
    folder = os.path.dirname(path)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)
    landscape_frame(field, alphas, betas).to_csv(path, index=False, float_format='%.17g')
    harness_logger.info(f"景观已写出: {path}")
    return path


def quadratic_trend(field):
    """网格上最小二乘拟合的二次曲面 c0 + c1·x + c2·y + c3·x² + c4·xy + c5·y²（x、y 取 [−1, 1]）"""
    field = np.asarray(field, dtype=np.float64)
    x, y = np.meshgrid(np.linspace(-1.0, 1.0, field.shape[0]), np.linspace(-1.0, 1.0, field.shape[1]), indexing='ij')
    basis = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1).reshape(-1, 6)
    coef, *_ = np.linalg.lstsq(basis, field.ravel(), rcond=None)
    return (basis @ coef).reshape(field.shape)


def total_variation(field, normalize=False, detrend=False):
    """
    网格上相邻点差值绝对值之和（两个方向）；含非有限值时返回 inf

    normalize=True 时除以场的极差，使不同量级的损失可以比较起伏程度。
    detrend=True 时先减去最小二乘二次曲面再求和：光滑的碗形或斜坡几乎为 0，
    剩下的是二次模型解释不了的起伏（极差仍取原始场的）
    """
    field = np.asarray(field, dtype=np.float64)
    if not np.all(np.isfinite(field)):
        return np.inf
    spread = float(np.max(field) - np.min(field))
    residual = field - quadratic_trend(field) if detrend and spread > 0 else field
    tv = float(np.sum(np.abs(np.diff(residual, axis=0))) + np.sum(np.abs(np.diff(residual, axis=1))))
    if not normalize:
        return tv
    return tv / spread if spread > 0 else 0.0
