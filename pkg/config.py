# 工具包配置（通过环境变量读取，未设置时使用默认值）
# 数值常量集中在这里，避免散落在各个模块中硬编码
import os

TOOLKIT_NAME = 'GraspPlan'
TOOLKIT_VERSION = '1.0.0'

RUNTIME_CONFIG = {
    # 日志与结果目录
    'log_dir': os.environ.get('GRASP_LOG_DIR', 'logs'),
    'results_dir': os.environ.get('GRASP_RESULTS_DIR', 'results'),
    'log_level': os.environ.get('GRASP_LOG_LEVEL', 'INFO').upper(),
    # 并行试验的默认工作线程数；CLI 的 --workers 优先
    'workers': int(os.environ.get('GRASP_WORKERS', 1)),
    # 数据并行时每个分块的行数（分块边界与线程数无关）
    'batch_chunk': int(os.environ.get('GRASP_BATCH_CHUNK', 256)),
}


# 数值配置
class NumericsConfig:
    # 所有实数统一使用 64 位浮点
    DTYPE = 'float64'

    # 损失或状态范数超过该值即判定发散
    DIVERGENCE_THRESHOLD = 1e12

    # 幂迭代上限；初始向量由固定种子的随机流给出
    MAX_POWER_ITERATIONS = 10_000
    POWER_ITERATION_SEED = 20240
    POWER_ITERATION_TOL = 1e-12

    # 对称性检查与特征对认证容差
    SYMMETRY_TOL = 1e-12
    EIGENPAIR_TOLERANCE = 1e-8

    # 轨迹边界（s_0 / s_T = g）一致性检查容差
    BOUNDARY_TOL = 1e-12

    # 蒙特卡洛检查统一使用 3 倍标准误
    MC_SIGMA_LEVEL = 3.0


# 训练配置（MLP 世界模型）
class TrainingConfig:
    HIDDEN_WIDTHS = (64, 64)
    EPOCHS = 500
    LEARNING_RATE = 1e-2
    BATCH_SIZE = 256
    HOLDOUT_FRACTION = 0.1
    # 留出集均方误差阈值（单位尺度状态）
    MSE_THRESHOLD = 1e-3
