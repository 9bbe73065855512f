"""
试验与试验组

单次试验: 在规划模型上开环规划，把返回的动作放到真实世界上执行，
取整条轨迹上到目标的最小距离判定成功。
试验组: 按派生种子并行执行多次试验，按 (格子, 序号) 排序后确定性汇总。
"""
import hashlib
import itertools
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from config import TOOLKIT_VERSION
from models.base import CountingModel, rollout
from numerics import ConfigError, RngStream, TrialFailedError, parallel_map
from planners.problem import PlanProblem
from planners.registry import describe_planner, resolve_config, run_planner
from utils.exporters import dump_json
from utils.landscape import landscape_slice, write_landscape_csv
from utils.objectives import flat_center, flat_loss
from utils.worlds import build_world, make_task, resolve_model_path

harness_logger = logging.getLogger('harness')

CLOCKS = ('work', 'wall')


def derive_seed(seed, *labels):
    """由基础种子与标签派生 63 位试验种子"""
    return RngStream(seed).derive(*labels).stream_id & 0x7FFFFFFFFFFFFFFF


def config_hash(payload):
    text = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(f"{TOOLKIT_VERSION}|{text}".encode('utf-8')).hexdigest()[:16]


@dataclass
class TrialSpec:
    world: dict
    planner: str
    horizon: int
    success_radius: float
    seed: int
    config: dict = field(default_factory=dict)
    task: dict = field(default_factory=lambda: {'family': 'wall_detour'})
    # 规划使用的模型（如训练得到的 MLP）；None 表示直接使用真实世界
    planner_model: dict = None
    time_limit: float = None
    label: str = ''
    index: int = 0

    def __post_init__(self):
        if self.success_radius is None:
            raise ConfigError("success_radius 为必填项")
        if not isinstance(self.success_radius, (int, float)) or self.success_radius <= 0:
            raise ConfigError(f"success_radius 必须为正，实际 {self.success_radius}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ConfigError(f"horizon 必须是 ≥ 1 的整数，实际 {self.horizon}")
        self.horizon = int(self.horizon)
        # 提前校验规划器配置，并保存完整解析后的配置
        self.config = resolve_config(self.planner, self.config).to_dict()
        if not self.label:
            self.label = self.planner

    def to_dict(self):
        return asdict(self)

    @property
    def fingerprint(self):
        """格子级配置哈希（不含种子与序号）"""
        payload = self.to_dict()
        payload.pop('index')
        payload.pop('label')
        payload.pop('seed')
        return config_hash(payload)


@dataclass
class TrialReport:
    success: bool
    time: float
    evals: int
    final_distance: float
    iterations: int
    diverged: bool
    timed_out: bool
    config_hash: str
    label: str = ''
    planner: str = ''
    horizon: int = 0
    index: int = 0
    seed: int = 0
    final_loss: float = None
    error: str = None
    actions: list = None

    def to_dict(self, include_actions=False):
        data = asdict(self)
        if not include_actions:
            data.pop('actions')
        return data


@dataclass
class TrialContext:
    """试验的中间产物（景观切片、距离剖面需要）"""
    problem: PlanProblem
    result: object
    true_world: object
    trajectory: object
    distances: np.ndarray


def _distances(states, g):
    with np.errstate(over='ignore', invalid='ignore'):
        d = np.linalg.norm(states - g, axis=1)
    d[~np.isfinite(d)] = np.inf
    return d


def execute_trial(spec):
    rng = RngStream(spec.seed)
    true_world = build_world(spec.world)
    plan_world = build_world(spec.planner_model) if spec.planner_model else true_world
    s0, g = make_task(spec.task, rng.derive('task'), true_world)

    counting = CountingModel(plan_world)
    problem = PlanProblem(counting, s0, g, spec.horizon, spec.time_limit)
    started = time.perf_counter()
    result = run_planner(spec.planner, problem, spec.config, rng.derive('planner', spec.planner))
    elapsed = time.perf_counter() - started

    with np.errstate(over='ignore', invalid='ignore'):
        trajectory = rollout(true_world, s0, result.actions, check=False)
    distances = _distances(trajectory.states, g)
    final_distance = float(np.min(distances))
    success = bool(final_distance <= spec.success_radius and not result.timed_out)

    report = TrialReport(
        success=success,
        time=elapsed,
        evals=counting.evals,
        final_distance=final_distance,
        iterations=result.iterations_used,
        diverged=result.diverged,
        timed_out=result.timed_out,
        config_hash=spec.fingerprint,
        label=spec.label,
        planner=spec.planner,
        horizon=spec.horizon,
        index=spec.index,
        seed=spec.seed,
        final_loss=float(result.final_loss),
        actions=np.asarray(result.actions).tolist(),
    )
    context = TrialContext(problem.with_model(plan_world), result, true_world, trajectory, distances)
    return report, context


def run_trial(spec):
    report, _ = execute_trial(spec)
    harness_logger.debug(
        f"试验 {spec.label}#{spec.index}: 成功 {report.success}, 距离 {report.final_distance:.4f}, "
        f"耗时 {report.time:.3f}s, 模型调用 {report.evals}"
    )
    return report


def verify_success(spec, report):
    """在真实世界上重新执行动作，复核成功判定"""
    if not report.success:
        return True
    true_world = build_world(spec.world)
    rng = RngStream(spec.seed)
    s0, g = make_task(spec.task, rng.derive('task'), true_world)
    trajectory = rollout(true_world, s0, np.asarray(report.actions), check=False)
    return float(np.min(_distances(trajectory.states, g))) <= spec.success_radius


def _failed_report(spec, error):
    return TrialReport(
        success=False, time=0.0, evals=0, final_distance=math.inf, iterations=0,
        diverged=False, timed_out=False, config_hash=spec.fingerprint, label=spec.label,
        planner=spec.planner, horizon=spec.horizon, index=spec.index, seed=spec.seed,
        error=f"{type(error).__name__}: {error}",
    )


def _safe_trial(spec):
    try:
        return run_trial(spec)
    except Exception as e:
        harness_logger.error(f"试验 {spec.label}#{spec.index} 失败: {e}", exc_info=True)
        return _failed_report(spec, e)


# ----------------------------------------------------------------------
# 试验组
# ----------------------------------------------------------------------
def wald_half_width(p, n):
    if n <= 0:
        return 0.0
    return 1.96 * math.sqrt(p * (1.0 - p) / n)


def _median(values):
    return float(np.median(values)) if values else None


def summarize_cell(reports, clock='work'):
    """一个格子的汇总；中位数只在成功试验上计算"""
    n = len(reports)
    successes = [r for r in reports if r.success]
    p = len(successes) / n if n else 0.0
    summary = {
        'label': reports[0].label if reports else '',
        'planner': reports[0].planner if reports else '',
        'horizon': reports[0].horizon if reports else 0,
        'trials': n,
        'successes': len(successes),
        'success_rate': p,
        'ci_half_width': wald_half_width(p, n),
        'diverged': sum(r.diverged for r in reports),
        'timed_out': sum(r.timed_out for r in reports),
        'errors': sum(r.error is not None for r in reports),
        'median_evals': _median([r.evals for r in successes]),
        'config_hash': reports[0].config_hash if reports else None,
    }
    if clock == 'wall':
        summary['median_time'] = _median([r.time for r in successes])
    return summary


class BatteryManager:
    """试验组执行与汇总"""

    def __init__(self, workers=1, clock='work'):
        if clock not in CLOCKS:
            raise ConfigError(f"clock 必须是 {CLOCKS} 之一，实际 {clock}")
        self.workers = max(1, int(workers))
        self.clock = clock

    def run(self, specs):
        specs = list(specs)
        if not specs:
            raise ConfigError("试验组至少需要 1 个试验")
        harness_logger.info(f"开始试验组: {len(specs)} 个试验, 线程数 {self.workers}")
        reports = parallel_map(_safe_trial, specs, self.workers, purpose='trials')

        # 复核成功判定
        for spec, report in zip(specs, reports):
            if report.success and not verify_success(spec, report):
                harness_logger.error(f"试验 {spec.label}#{spec.index} 复核失败，改记为未成功")
                report.success = False
                report.error = 'success re-check failed'

        order = sorted(range(len(specs)), key=lambda i: (specs[i].label, specs[i].horizon, specs[i].index))
        reports = [reports[i] for i in order]
        cells = []
        for _, group in itertools.groupby(reports, key=lambda r: (r.label, r.horizon)):
            cells.append(summarize_cell(list(group), self.clock))
        harness_logger.info(f"试验组完成: {len(cells)} 个格子")
        return BatteryReport(cells=cells, trials=reports, clock=self.clock)


@dataclass
class BatteryReport:
    cells: list
    trials: list
    clock: str = 'work'
    config: dict = None

    def to_dict(self):
        return {
            'toolkit_version': TOOLKIT_VERSION,
            'clock': self.clock,
            'config': self.config,
            'config_hash': config_hash(self.config) if self.config is not None else None,
            'cells': self.cells,
        }

    def to_json(self):
        return dump_json(self.to_dict())

    def trials_frame(self):
        return pd.DataFrame([r.to_dict() for r in self.trials])

    def cell(self, label, horizon=None):
        for cell in self.cells:
            if cell['label'] == label and (horizon is None or cell['horizon'] == horizon):
                return cell
        raise KeyError(f"没有格子 {label} (horizon={horizon})")


def run_battery(specs, workers=1, clock='work'):
    return BatteryManager(workers=workers, clock=clock).run(specs)


# ----------------------------------------------------------------------
# 试验组配置（JSON）
# ----------------------------------------------------------------------
BENCH_FIELDS = {
    'name', 'seed', 'trials_per_cell', 'success_radius', 'time_limit', 'clock',
    'world', 'planner_model', 'task', 'cells', 'sweep',
}
CELL_FIELDS = {'label', 'planner', 'config', 'horizon', 'horizons'}


TRIAL_FIELDS = {'world', 'planner', 'config', 'horizon', 'success_radius', 'seed', 'task',
                'planner_model', 'time_limit', 'label'}


def read_json_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"配置文件不存在: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"配置文件不是合法 JSON: {e}") from e


def _resolve_model_files(config, base_dir):
    """world / planner_model 中 model_file 的相对路径相对于配置文件所在目录"""
    for key in ('world', 'planner_model'):
        spec = config.get(key)
        if isinstance(spec, dict) and spec.get('id') == 'model_file':
            params = dict(spec.get('params') or {})
            params['path'] = resolve_model_path(params.get('path'), base_dir)
            config[key] = {**spec, 'params': params}
    return config


def load_bench_config(path):
    config = read_json_config(path)
    if not isinstance(config, dict):
        raise ConfigError("试验组配置必须是 JSON 对象")
    return _resolve_model_files(config, os.path.dirname(os.path.abspath(path)))


def load_trial_spec(path, seed=None):
    """单次试验配置（plan / landscape / profile 子命令使用）"""
    config = read_json_config(path)
    if not isinstance(config, dict):
        raise ConfigError("试验配置必须是 JSON 对象")
    unknown = sorted(set(config) - TRIAL_FIELDS)
    if unknown:
        raise ConfigError(f"试验配置不支持的字段: {unknown}")
    for name in ('world', 'planner', 'horizon'):
        if name not in config:
            raise ConfigError(f"试验配置缺少 {name}")
    config = _resolve_model_files(config, os.path.dirname(os.path.abspath(path)))
    if seed is not None:
        config['seed'] = int(seed)
    config.setdefault('seed', 0)
    config.setdefault('success_radius', None)
    return TrialSpec(**config)


def _sweep_cells(cells, sweep):
    """把每个格子展开到 sweep 中各字段取值的笛卡尔积上"""
    if not sweep:
        return cells
    names = sorted(sweep)
    expanded = []
    for cell in cells:
        for values in itertools.product(*(sweep[name] for name in names)):
            config = dict(cell.get('config') or {})
            config.update(dict(zip(names, values)))
            suffix = ','.join(f"{name}={value}" for name, value in zip(names, values))
            expanded.append({**cell, 'config': config, 'label': f"{cell.get('label', cell['planner'])}[{suffix}]"})
    return expanded


def expand_bench_config(config, seed=None):
    """JSON 配置 → TrialSpec 列表；同一试验序号在所有格子中使用同一任务种子（配对比较）"""
    unknown = sorted(set(config) - BENCH_FIELDS)
    if unknown:
        raise ConfigError(f"试验组配置不支持的字段: {unknown}")
    if config.get('success_radius') is None:
        raise ConfigError("试验组配置缺少必填项 success_radius")
    for name in ('world', 'cells'):
        if name not in config:
            raise ConfigError(f"试验组配置缺少 {name}")
    if config.get('clock', 'work') == 'work' and config.get('time_limit') is not None:
        # work 时钟的报告按调用次数比较，墙钟截断会让结果随机器负载变化
        raise ConfigError("clock 为 work 时不能设置 time_limit（超时按墙钟判定，结果不可复现）；请改用 clock: wall")
    base_seed = int(config.get('seed', 0) if seed is None else seed)
    trials = int(config.get('trials_per_cell', 1))
    if trials < 1:
        raise ConfigError("trials_per_cell 必须 ≥ 1")

    specs = []
    for cell in _sweep_cells(config['cells'], config.get('sweep')):
        unknown = sorted(set(cell) - CELL_FIELDS)
        if unknown:
            raise ConfigError(f"格子不支持的字段: {unknown}")
        if 'planner' not in cell:
            raise ConfigError(f"格子缺少 planner: {cell}")
        horizons = cell.get('horizons') or [cell.get('horizon')]
        for horizon in horizons:
            if horizon is None:
                raise ConfigError(f"格子缺少 horizon: {cell}")
            for index in range(trials):
                specs.append(TrialSpec(
                    world=config['world'],
                    planner=cell['planner'],
                    config=cell.get('config') or {},
                    horizon=horizon,
                    success_radius=config['success_radius'],
                    seed=derive_seed(base_seed, 'trial', index),
                    task=config.get('task') or {'family': 'wall_detour'},
                    planner_model=config.get('planner_model'),
                    time_limit=config.get('time_limit'),
                    label=cell.get('label', cell['planner']),
                    index=index,
                ))
    return specs


def run_bench(config, seed=None, workers=1):
    """执行试验组配置；报告中嵌入完整解析后的配置"""
    clock = config.get('clock', 'work')
    specs = expand_bench_config(config, seed=seed)
    battery = run_battery(specs, workers=workers, clock=clock)
    resolved = dict(config)
    if seed is not None:
        resolved['seed'] = int(seed)
    resolved['planners'] = {spec.label: {'planner': spec.planner, 'description': describe_planner(spec.planner),
                                         'config': spec.config} for spec in specs}
    battery.config = resolved
    return battery


# ----------------------------------------------------------------------
# 输出
# ----------------------------------------------------------------------
def cumulative_success_curve(trials, time_grid, metric='time'):
    """τ 时刻前已成功的试验比例及 Wald 95% 半宽"""
    trials = list(trials)
    n = len(trials)
    solved = sorted(getattr(r, metric) for r in trials if r.success)
    rows = []
    for tau in sorted(float(t) for t in time_grid):
        count = sum(1 for value in solved if value <= tau)
        p = count / n if n else 0.0
        rows.append({'tau': tau, 'success_rate': p, 'ci_half_width': wald_half_width(p, n)})
    return pd.DataFrame(rows, columns=['tau', 'success_rate', 'ci_half_width'])


def emit_landscape(spec, loss_kind, grid, radius, out_path, gamma=None):
    """
    运行规划器至结束，在收敛点附近做景观切片并写出 CSV，返回网格

    切片中心是返回动作及其在规划模型上的展开状态（动力学一致的点）。
    GRASP 返回按 shooting 损失挑选的动作，与之对应的动力学一致状态就是它的展开
    （同步步结束时规划器也把中间状态重置为展开）；迭代中带噪的中间状态不作为中心
    """
    _, context = execute_trial(spec)
    problem = context.problem
    if gamma is None:
        gamma = spec.config.get('gamma', 1.0)
    loss = flat_loss(loss_kind, problem.model, problem, gamma=gamma)
    center = flat_center(loss_kind, problem, context.result.actions)
    field, alphas, betas, _, _ = landscape_slice(loss, center, RngStream(spec.seed).derive('landscape'), grid, radius)
    write_landscape_csv(field, alphas, betas, out_path)
    return field


def distance_profile(spec):
    report, context = execute_trial(spec)
    if not report.success:
        raise TrialFailedError(
            f"试验未成功（最小距离 {report.final_distance:.4f} > 半径 {spec.success_radius}），无法输出距离剖面"
        )
    return pd.DataFrame({'t': np.arange(context.distances.shape[0]), 'distance': context.distances})


def emit_distance_profile(spec, out_path):
    frame = distance_profile(spec)
    folder = os.path.dirname(out_path)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)
    frame.to_csv(out_path, index=False, float_format='%.17g')
    harness_logger.info(f"距离剖面已写出: {out_path}")
    return frame


def trials_from_frame(frame):
    """逐试验 CSV（DataFrame）还原为 TrialReport 列表"""
    names = set(TrialReport.__dataclass_fields__) - {'actions'}
    reports = []
    for row in frame.to_dict(orient='records'):
        values = {k: v for k, v in row.items() if k in names}
        for key in ('error', 'final_loss'):
            if key in values and isinstance(values[key], float) and math.isnan(values[key]):
                values[key] = None
        for key in ('success', 'diverged', 'timed_out'):
            values[key] = bool(values.get(key, False))
        reports.append(TrialReport(**values))
    return reports
