"""
数值基础模块
稠密向量/矩阵运算、确定性随机数流、高斯采样、谱估计，以及全工具包共用的异常与线程池
"""
import hashlib
import logging
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from config import NumericsConfig, RUNTIME_CONFIG

# 配置数值模块的日志记录器
numerics_logger = logging.getLogger('numerics')

# 全局线程池（按用途和线程数缓存）
_worker_pools = {}
_pool_lock = threading.Lock()


class ArgumentError(ValueError):
    """参数不合法（维度不匹配、负的标准差、非对称输入等）"""


class ConfigError(ValueError):
    """配置字段缺失、未知或取值非法"""


class DivergenceError(RuntimeError):
    """迭代发散：出现非有限值或超过发散阈值"""

    def __init__(self, message, step=None, value=None):
        super().__init__(message)
        self.step = step
        self.value = value


class TrainingError(RuntimeError):
    """模型训练未达到留出集误差阈值"""

    def __init__(self, message, final_loss=None):
        super().__init__(message)
        self.final_loss = final_loss


class ConvergenceError(RuntimeError):
    """幂迭代在上限次数内未达到容差"""


class TrialFailedError(RuntimeError):
    """试验未成功，无法生成依赖成功轨迹的输出"""


def as_vector(x, dim=None, name='vector'):
    """转换为 float64 一维数组并检查长度和有限性"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ArgumentError(f"{name} 必须是一维向量，实际形状 {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ArgumentError(f"{name} 维度不匹配: 期望 {dim}，实际 {arr.shape[0]}")
    return arr


def as_matrix(m, name='matrix'):
    """转换为 float64 二维数组（行主序连续存储），要求所有元素有限"""
    arr = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ArgumentError(f"{name} 必须是二维矩阵，实际形状 {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"{name} 含有非有限元素")
    return arr


def rowwise_matvec(weights, rows):
    """
    逐行计算 rows[i] @ weights.T

    每一行独立做乘积再沿最后一维求和，不经过 BLAS 分块，
    因此单行调用与批量调用的结果逐位一致
    """
    rows = np.asarray(rows, dtype=np.float64)
    return np.sum(rows[..., None, :] * weights, axis=-1)


def pairwise_sum(values):
    """固定拓扑的成对归约（numpy 对连续一维数组使用成对求和）"""
    return float(np.sum(np.ascontiguousarray(values, dtype=np.float64)))


def _label_to_int(label):
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(label).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


class RngStream:
    """
    基于计数器的随机数流（numpy Philox）

    (seed, stream_id) 作为 Philox 的 128 位密钥，相同密钥在任何运行、任何线程调度下
    产生相同序列；派生子流不依赖父流已经消耗了多少随机数
    """

    def __init__(self, seed, stream_id=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._generator = np.random.Generator(np.random.Philox(key=key))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def derive(self, *labels):
        """按标签派生独立子流（标签可以是整数或字符串）"""
        entropy = [self.stream_id] + [_label_to_int(label) for label in labels]
        child_id = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
        return RngStream(self.seed, int(child_id))

    def standard_normal(self, size):
        return self._generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._generator.uniform(low, high, size)

    def permutation(self, n):
        return self._generator.permutation(n)


def gauss_vec(rng, dim, sigma):
    """返回 dim 个独立同分布 N(0, sigma²) 样本；sigma=0 时仍推进随机流"""
    if sigma is None or not np.isfinite(sigma) or sigma < 0:
        raise ArgumentError(f"sigma 必须是非负有限数，实际 {sigma}")
    if int(dim) != dim or dim < 1:
        raise ArgumentError(f"dim 必须 ≥ 1，实际 {dim}")
    return float(sigma) * rng.standard_normal(int(dim))


def spectral_norm(m, tol=NumericsConfig.POWER_ITERATION_TOL):
    """
    幂迭代估计 ‖m‖₂（对 mᵀm 迭代，初始向量取自固定种子的随机流，结果可复现）

    零矩阵直接返回 0；超过迭代上限未收敛时抛出 ConvergenceError
    """
    if tol <= 0:
        raise ArgumentError(f"tol 必须为正，实际 {tol}")
    m = as_matrix(m)
    if not np.any(m):
        return 0.0

    gram = m.T @ m
    # 固定向量（如全 1）可能与主奇异向量正交，随机起点几乎必然不会
    v = RngStream(NumericsConfig.POWER_ITERATION_SEED).derive('spectral_norm').standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)

    lam_old = 0.0
    for iteration in range(NumericsConfig.MAX_POWER_ITERATIONS):
        w = gram @ v
        lam = float(v @ w)
        norm_w = float(np.linalg.norm(w))
        if abs(lam - lam_old) <= tol * lam:
            return float(np.sqrt(lam))
        lam_old = lam
        v = w / norm_w

    numerics_logger.error(f"幂迭代未收敛: 形状 {m.shape}, 最后估计 {lam_old}")
    raise ConvergenceError(
        f"幂迭代在 {NumericsConfig.MAX_POWER_ITERATIONS} 次内未达到容差 {tol}"
    )


def max_eig_sym(m, tol=NumericsConfig.POWER_ITERATION_TOL):
    """对称矩阵的最大特征值（LAPACK eigvalsh）"""
    if tol <= 0:
        raise ArgumentError(f"tol 必须为正，实际 {tol}")
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ArgumentError(f"矩阵必须是方阵，实际形状 {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))))
    if float(np.max(np.abs(m - m.T))) > NumericsConfig.SYMMETRY_TOL * scale:
        raise ArgumentError("输入矩阵不对称")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[-1])


def get_worker_pool(purpose, workers):
    """获取（必要时创建）指定用途的线程池；不同用途使用不同的池，避免嵌套提交时互相等待"""
    key = (purpose, int(workers))
    pool = _worker_pools.get(key)
    if pool is not None:
        return pool

    with _pool_lock:
        pool = _worker_pools.get(key)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=int(workers), thread_name_prefix=f'grasp-{purpose}')
            _worker_pools[key] = pool
            numerics_logger.info(f"线程池初始化成功: 用途={purpose}, 线程数={workers}")
        return pool


def parallel_map(fn, items, workers=None, purpose='batch'):
    """按输入顺序返回结果；workers ≤ 1 时串行执行"""
    if workers is None:
        workers = RUNTIME_CONFIG['workers']
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    pool = get_worker_pool(purpose, workers)
    return list(pool.map(fn, items))


def chunk_slices(total, chunk=None):
    """把 [0, total) 切成固定大小的分块（分块边界只取决于 total 和 chunk）"""
    chunk = chunk or RUNTIME_CONFIG['batch_chunk']
    return [slice(start, min(start + chunk, total)) for start in range(0, total, chunk)]
