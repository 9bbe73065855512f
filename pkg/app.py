"""
GraspPlan 命令行入口

子命令：
- plan          单次试验，stdout 输出 TrialReport JSON
- bench         按 JSON 配置运行试验组，写出 BatteryReport JSON 与逐试验 CSV
- landscape     收敛点附近的损失景观切片（CSV）
- profile       成功轨迹的到目标距离剖面（CSV）
- curve         由逐试验 CSV 计算累计成功率曲线（CSV）
- theory-check  线性理论与蒙特卡洛检查（JSON）
- train-model   从参考世界采样并训练 MLP 世界模型（JSON）

退出码：0 正常完成；1 配置 / 参数错误或文件不存在；2 其他内部错误
"""
import argparse
import logging
import os
import sys
from logging.handlers import RotatingFileHandler

import numpy as np
import pandas as pd

from config import RUNTIME_CONFIG, TOOLKIT_NAME, TOOLKIT_VERSION, TrainingConfig
from numerics import ArgumentError, ConfigError, RngStream

app_logger = logging.getLogger('harness')

LOG_AREAS = ('numerics', 'models', 'planners', 'theory', 'harness')

DEFAULT_TRAIN_WORLD = {'id': 'wall', 'params': {'preset': 'gap', 'action_bound': 1.0}}

_logging_ready = False


def configure_logging(log_dir=None, level=None):
    """文件日志（轮转 10MB × 10）+ 控制台日志（stderr，stdout 留给 JSON 输出）"""
    global _logging_ready
    if _logging_ready:
        return
    log_dir = log_dir or RUNTIME_CONFIG['log_dir']
    level = getattr(logging, (level or RUNTIME_CONFIG['log_level']).upper(), logging.INFO)
    os.makedirs(log_dir, exist_ok=True)

    file_handler = RotatingFileHandler(
        os.path.join(log_dir, 'grasp.log'),
        maxBytes=10 * 1024 * 1024,
        backupCount=10,
        encoding='utf-8'
    )
    file_handler.setFormatter(logging.Formatter(
        '%(asctime)s [%(levelname)s] %(name)s: %(message)s [in %(pathname)s:%(lineno)d]'
    ))
    file_handler.setLevel(level)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(logging.Formatter('%(asctime)s [%(levelname)s] %(name)s: %(message)s'))
    console_handler.setLevel(level)

    for area in LOG_AREAS:
        area_logger = logging.getLogger(area)
        area_logger.setLevel(level)
        area_logger.addHandler(file_handler)
        area_logger.addHandler(console_handler)
        area_logger.propagate = False  # 避免重复记录
    _logging_ready = True


def _print_json(payload):
    from utils.exporters import dump_json
    sys.stdout.write(dump_json(payload) + '\n')
    sys.stdout.flush()


def _parse_floats(text, name):
    try:
        return [float(x) for x in text.split(',') if x.strip()]
    except ValueError as e:
        raise ArgumentError(f"{name} 必须是逗号分隔的数字: {text}") from e


# ----------------------------------------------------------------------
# 子命令
# ----------------------------------------------------------------------
def cmd_plan(args):
    from utils.exporters import write_csv, write_json
    from utils.trial_runner import execute_trial, load_trial_spec

    spec = load_trial_spec(args.config, seed=args.seed)
    report, context = execute_trial(spec)
    payload = {
        'toolkit_version': TOOLKIT_VERSION,
        'spec': spec.to_dict(),
        'report': report.to_dict(include_actions=args.actions),
    }
    if args.out:
        write_json(payload, args.out)
    if args.trace:
        trace = context.result.trace
        if trace is None:
            raise ConfigError("规划器配置未开启 record_trace，无法输出迭代轨迹")
        write_csv(trace.to_frame(), args.trace)
    _print_json(payload)
    return 0


def cmd_bench(args):
    from utils.exporters import write_battery
    from utils.trial_runner import load_bench_config, run_bench

    config = load_bench_config(args.config)
    workers = args.workers or RUNTIME_CONFIG['workers']
    battery = run_bench(config, seed=args.seed, workers=workers)
    out_dir = args.out or RUNTIME_CONFIG['results_dir']
    name = config.get('name') or os.path.splitext(os.path.basename(args.config))[0]
    paths = write_battery(battery, out_dir, name=name, excel=args.excel)
    for cell in battery.cells:
        app_logger.info(
            f"{cell['label']} H={cell['horizon']}: 成功率 {cell['success_rate']:.1%} "
            f"± {cell['ci_half_width']:.1%} ({cell['successes']}/{cell['trials']})"
        )
    _print_json({'outputs': paths, 'cells': len(battery.cells)})
    return 0


def cmd_landscape(args):
    from utils.landscape import total_variation
    from utils.trial_runner import emit_landscape, load_trial_spec

    spec = load_trial_spec(args.config, seed=args.seed)
    out = args.out or os.path.join(RUNTIME_CONFIG['results_dir'], f'landscape_{args.loss}.csv')
    field = emit_landscape(spec, args.loss, args.grid, args.radius, out)
    _print_json({'output': out, 'loss': args.loss, 'grid': args.grid, 'radius': args.radius,
                 'total_variation': total_variation(field, normalize=True),
                 'detrended_variation': total_variation(field, normalize=True, detrend=True)})
    return 0


def cmd_profile(args):
    from utils.trial_runner import emit_distance_profile, load_trial_spec

    spec = load_trial_spec(args.config, seed=args.seed)
    out = args.out or os.path.join(RUNTIME_CONFIG['results_dir'], 'distance_profile.csv')
    frame = emit_distance_profile(spec, out)
    distances = frame['distance'].to_numpy()
    _print_json({'output': out, 'steps': int(distances.size - 1),
                 'monotone': bool(np.all(np.diff(distances) <= 0))})
    return 0


def cmd_curve(args):
    from utils.exporters import write_csv
    from utils.trial_runner import cumulative_success_curve, trials_from_frame

    if not os.path.exists(args.trials):
        raise FileNotFoundError(f"逐试验 CSV 不存在: {args.trials}")
    frame = pd.read_csv(args.trials)
    if args.label is not None:
        frame = frame[frame['label'] == args.label]
    if args.horizon is not None:
        frame = frame[frame['horizon'] == args.horizon]
    if frame.empty:
        raise ConfigError("筛选后没有试验记录")
    trials = trials_from_frame(frame)
    if args.grid:
        grid = _parse_floats(args.grid, '--grid')
    else:
        solved = [getattr(t, args.metric) for t in trials if t.success]
        top = max(solved) if solved else 1.0
        grid = np.linspace(0.0, top, args.points).tolist()
    curve = cumulative_success_curve(trials, grid, metric=args.metric)
    out = args.out or os.path.join(RUNTIME_CONFIG['results_dir'], 'success_curve.csv')
    write_csv(curve, out)
    _print_json({'output': out, 'points': len(curve), 'final_success_rate': float(curve['success_rate'].iloc[-1])})
    return 0


def cmd_theory_check(args):
    from utils.exporters import write_json
    from utils.theory_checks import run_theory_checks

    names = args.names.split(',') if args.names else None
    workers = args.workers or RUNTIME_CONFIG['workers']
    reports = run_theory_checks(seed=args.seed or 0, names=names, quick=args.quick, workers=workers)
    payload = {'toolkit_version': TOOLKIT_VERSION, 'seed': args.seed or 0, 'quick': args.quick, 'checks': reports}
    if args.out:
        write_json(payload, args.out)
    failed = [r['check_name'] for r in reports if r['status'] != 'pass']
    if failed:
        app_logger.warning(f"未通过的理论检查: {failed}")
    _print_json(payload)
    return 0


def cmd_train_model(args):
    from models.mlp import collect_transitions, train_mlp
    from models.model_store import save_model
    from utils.trial_runner import read_json_config
    from utils.worlds import build_world

    world_spec = DEFAULT_TRAIN_WORLD
    if args.config:
        world_spec = read_json_config(args.config)
        if not isinstance(world_spec, dict):
            raise ConfigError("训练配置必须是描述参考世界的 JSON 对象")
    seed = args.seed or 0
    rng = RngStream(seed)
    widths = [int(w) for w in args.widths.split(',')] if args.widths else list(TrainingConfig.HIDDEN_WIDTHS)

    print("\n" + "=" * 60)
    print("世界模型训练")
    print("=" * 60)

    print(f"\n[1/3] 从参考世界 {world_spec.get('id')} 采样 {args.samples} 条转移...")
    world = build_world(world_spec)
    data = collect_transitions(world, args.samples, rng.derive('data'), box=(-args.box, args.box))

    print(f"\n[2/3] 训练 MLP（宽度 {widths}, {args.epochs} 轮）...")
    model = train_mlp(data, widths=widths, epochs=args.epochs, lr=args.lr, rng=rng.derive('train'),
                      threshold=args.threshold)

    out = args.out or os.path.join(RUNTIME_CONFIG['results_dir'], 'mlp_model.json')
    print(f"\n[3/3] 保存模型到 {out}...")
    save_model(model, out, seed=seed, training_loss=model.training_loss)

    print("\n" + "=" * 60)
    print(f"训练完成，留出集 MSE {model.training_loss:.3e}")
    print("=" * 60)
    return 0


# ----------------------------------------------------------------------
# 参数解析
# ----------------------------------------------------------------------
def build_parser():
    parser = argparse.ArgumentParser(prog='grasp', description=f"{TOOLKIT_NAME} {TOOLKIT_VERSION} 规划工具包")
    parser.add_argument('--log-dir', help='日志目录（默认取 GRASP_LOG_DIR）')
    parser.add_argument('--log-level', help='日志级别（默认取 GRASP_LOG_LEVEL）')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, config_required=True):
        p.add_argument('--config', required=config_required, help='JSON 配置文件路径')
        p.add_argument('--seed', type=int, default=None, help='随机种子（覆盖配置中的 seed）')
        p.add_argument('--workers', type=int, default=None, help='并行线程数（默认取 GRASP_WORKERS）')
        p.add_argument('--out', help='输出路径')
        return p

    p = common(sub.add_parser('plan', help='运行单次试验'))
    p.add_argument('--actions', action='store_true', help='报告中包含规划得到的动作序列')
    p.add_argument('--trace', help='迭代轨迹 CSV 输出路径（需 record_trace）')
    p.set_defaults(handler=cmd_plan)

    p = common(sub.add_parser('bench', help='运行试验组'))
    p.add_argument('--excel', action='store_true', help='同时写出 Excel 汇总')
    p.set_defaults(handler=cmd_bench)

    p = common(sub.add_parser('landscape', help='损失景观切片'))
    p.add_argument('--loss', choices=('shooting', 'lifted', 'grasp'), default='shooting')
    p.add_argument('--grid', type=int, default=41, help='每个方向的网格点数（≥ 3）')
    p.add_argument('--radius', type=float, default=1.0)
    p.set_defaults(handler=cmd_landscape)

    p = common(sub.add_parser('profile', help='到目标距离剖面'))
    p.set_defaults(handler=cmd_profile)

    p = common(sub.add_parser('curve', help='累计成功率曲线'), config_required=False)
    p.add_argument('--trials', required=True, help='bench 写出的逐试验 CSV')
    p.add_argument('--metric', choices=('time', 'evals'), default='time')
    p.add_argument('--grid', help='逗号分隔的时间点；缺省时在 [0, 最大成功值] 上均匀取点')
    p.add_argument('--points', type=int, default=50)
    p.add_argument('--label', help='只取该格子的试验')
    p.add_argument('--horizon', type=int, help='只取该规划步长的试验')
    p.set_defaults(handler=cmd_curve)

    p = common(sub.add_parser('theory-check', help='理论检查'), config_required=False)
    p.add_argument('--names', help='逗号分隔的检查名（默认全部）')
    p.add_argument('--quick', action='store_true', help='缩小蒙特卡洛规模（冒烟测试）')
    p.set_defaults(handler=cmd_theory_check)

    p = common(sub.add_parser('train-model', help='训练 MLP 世界模型'), config_required=False)
    p.add_argument('--samples', type=int, default=20000)
    p.add_argument('--epochs', type=int, default=TrainingConfig.EPOCHS)
    p.add_argument('--lr', type=float, default=TrainingConfig.LEARNING_RATE)
    p.add_argument('--widths', help='逗号分隔的隐藏层宽度')
    p.add_argument('--box', type=float, default=1.0, help='状态采样范围 [-box, box]')
    p.add_argument('--threshold', type=float, default=TrainingConfig.MSE_THRESHOLD)
    p.set_defaults(handler=cmd_train_model)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_dir, args.log_level)
    try:
        return args.handler(args)
    except (ConfigError, ArgumentError, FileNotFoundError) as e:
        app_logger.error(f"配置错误: {e}")
        return 1
    except Exception as e:
        app_logger.error(f"内部错误: {e}", exc_info=True)
        return 2


if __name__ == '__main__':
    sys.exit(main())
