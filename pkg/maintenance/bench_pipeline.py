"""
统一复现流水线脚本
步骤：训练世界模型 -> 理论检查 -> 规划步长试验组 -> 消融试验组 -> 景观 / 剖面 / 曲线
"""
import argparse
import json
import os
import sys
import time
from datetime import datetime

# 确保可以从项目根目录导入 numerics / models / planners / utils
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.dirname(CURRENT_DIR)
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from app import DEFAULT_TRAIN_WORLD, configure_logging
from models.mlp import collect_transitions, train_mlp
from models.model_store import save_model
from numerics import RngStream, TrialFailedError
from utils.exporters import write_battery, write_csv, write_json
from utils.landscape import total_variation
from utils.theory_checks import run_theory_checks
from utils.trial_runner import (cumulative_success_curve, emit_distance_profile, emit_landscape,
                                load_bench_config, load_trial_spec, run_bench)
from utils.worlds import build_world

CONFIG_DIR = os.path.join(PROJECT_ROOT, 'configs')
# 景观切片半径
LANDSCAPE_RADIUS = 3.0


def _banner(title):
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)
    sys.stdout.flush()


def _step(text):
    print(f"\n{text}")
    sys.stdout.flush()


def _run_bench_file(name, out_dir, seed, workers, excel):
    config = load_bench_config(os.path.join(CONFIG_DIR, f'{name}.json'))
    battery = run_bench(config, seed=seed, workers=workers)
    paths = write_battery(battery, out_dir, name=config.get('name', name), excel=excel)
    for cell in battery.cells:
        print(f"  {cell['label']:<32} H={cell['horizon']:<4} 成功率 {cell['success_rate']:6.1%} "
              f"± {cell['ci_half_width']:.1%}")
    return battery, paths


def run_bench_pipeline(
    out_dir,
    seed=0,
    workers=1,
    skip_train=False,
    skip_theory=False,
    skip_ablation=False,
    quick_theory=False,
    train_samples=20000,
    excel=False
):
    """
    运行完整的复现流水线，返回各步骤摘要
    """
    summary = {
        'out_dir': out_dir,
        'seed': seed,
        'started_at': datetime.now().isoformat(timespec='seconds')
    }
    os.makedirs(out_dir, exist_ok=True)

    _banner("复现流水线启动")

    if skip_train:
        _step("[1/5] 跳过世界模型训练（按参数配置）")
    else:
        _step(f"[1/5] 训练 MLP 世界模型（{train_samples} 条转移）...")
        rng = RngStream(seed)
        world = build_world(DEFAULT_TRAIN_WORLD)
        data = collect_transitions(world, train_samples, rng.derive('data'))
        model = train_mlp(data, rng=rng.derive('train'))
        model_path = os.path.join(out_dir, 'mlp_model.json')
        save_model(model, model_path, seed=seed, training_loss=model.training_loss)
        summary['model'] = {'path': model_path, 'holdout_mse': model.training_loss}

    if skip_theory:
        _step("[2/5] 跳过理论检查（按参数配置）")
    else:
        _step("[2/5] 运行理论检查（光滑性 / 收缩 / OU 管 / 平滑化 / 双势阱）...")
        reports = run_theory_checks(seed=seed, quick=quick_theory, workers=workers)
        write_json({'seed': seed, 'quick': quick_theory, 'checks': reports},
                   os.path.join(out_dir, 'theory_checks.json'))
        summary['theory'] = {r['check_name']: r['status'] for r in reports}
        for r in reports:
            print(f"  {r['check_name']:<28} {r['status']}")

    _step("[3/5] 规划步长试验组（H = 40 / 60 / 80）...")
    started = time.perf_counter()
    horizon_battery, paths = _run_bench_file('bench_horizon', out_dir, seed, workers, excel)
    summary['bench_horizon'] = paths

    if skip_ablation:
        _step("[4/5] 跳过消融试验组（按参数配置）")
    else:
        _step("[4/5] 消融试验组（同步 / 梯度截断 / 噪声）与 σ 扫描...")
        _, paths = _run_bench_file('bench_ablation', out_dir, seed, workers, excel)
        summary['bench_ablation'] = paths
        _, paths = _run_bench_file('bench_sigma_sweep', out_dir, seed, workers, excel)
        summary['bench_sigma_sweep'] = paths
    # 方向性复现（步长 / 消融 / σ 扫描）的总墙钟时间
    summary['directional_seconds'] = round(time.perf_counter() - started, 1)
    print(f"  方向性复现耗时 {summary['directional_seconds']:.1f} 秒")

    if not skip_ablation:
        _step("      基线试验组（lifted / CEM）...")
        _, paths = _run_bench_file('bench_baselines', out_dir, seed, workers, excel)
        summary['bench_baselines'] = paths

    _step("[5/5] 景观切片、距离剖面与累计成功率曲线...")
    fields = {}
    for name, loss_kind in (('trial_wall_gd', 'shooting'), ('trial_wall_grasp', 'grasp')):
        spec = load_trial_spec(os.path.join(CONFIG_DIR, f'{name}.json'), seed=seed)
        out = os.path.join(out_dir, f'landscape_{loss_kind}.csv')
        field = emit_landscape(spec, loss_kind, 41, LANDSCAPE_RADIUS, out)
        fields[loss_kind] = total_variation(field, normalize=True, detrend=True)
    summary['landscape_total_variation'] = fields

    spec = load_trial_spec(os.path.join(CONFIG_DIR, 'trial_wall_grasp.json'), seed=seed)
    try:
        emit_distance_profile(spec, os.path.join(out_dir, 'distance_profile.csv'))
        summary['distance_profile'] = 'ok'
    except TrialFailedError as e:
        print(f"  距离剖面跳过: {e}")
        summary['distance_profile'] = str(e)

    trials = [t for t in horizon_battery.trials if t.label == 'grasp' and t.horizon == 40]
    solved = [t.evals for t in trials if t.success]
    top = max(solved) if solved else 1
    grid = [top * i / 49 for i in range(50)]
    write_csv(cumulative_success_curve(trials, grid, metric='evals'),
              os.path.join(out_dir, 'success_curve_grasp_h40.csv'))

    summary['finished_at'] = datetime.now().isoformat(timespec='seconds')
    _banner("复现流水线完成")
    print(json.dumps(summary, ensure_ascii=False, indent=2))
    sys.stdout.flush()
    return summary


def parse_args():
    parser = argparse.ArgumentParser(description="运行复现流水线（训练 / 理论检查 / 试验组 / 图表数据）")
    parser.add_argument('--out', default=os.path.join(PROJECT_ROOT, 'results'), help='输出目录')
    parser.add_argument('--seed', type=int, default=0, help='基础随机种子')
    parser.add_argument('--workers', type=int, default=1, help='并行线程数')
    parser.add_argument('--skip-train', action='store_true', help='跳过世界模型训练')
    parser.add_argument('--skip-theory', action='store_true', help='跳过理论检查')
    parser.add_argument('--skip-ablation', action='store_true', help='跳过消融试验组与 σ 扫描')
    parser.add_argument('--quick-theory', action='store_true', help='理论检查使用缩小的蒙特卡洛规模')
    parser.add_argument('--train-samples', type=int, default=20000, help='训练数据条数')
    parser.add_argument('--excel', action='store_true', help='试验组同时写出 Excel')
    return parser.parse_args()


if __name__ == '__main__':
    args = parse_args()
    configure_logging()
    run_bench_pipeline(
        out_dir=args.out,
        seed=args.seed,
        workers=args.workers,
        skip_train=args.skip_train,
        skip_theory=args.skip_theory,
        skip_ablation=args.skip_ablation,
        quick_theory=args.quick_theory,
        train_samples=args.train_samples,
        excel=args.excel
    )
