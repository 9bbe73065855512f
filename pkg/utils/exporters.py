"""导出功能模块 - 试验组报告 JSON、逐试验 CSV / Excel、成功率曲线"""
import json
import logging
import os

import pandas as pd
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

harness_logger = logging.getLogger('harness')

# 逐试验表的列顺序与表头（Excel 使用中文表头，CSV 保持字段名）
TRIAL_COLUMNS = {
    'label': '格子',
    'planner': '规划器',
    'horizon': '规划步长',
    'index': '序号',
    'seed': '种子',
    'success': '成功',
    'final_distance': '最小距离',
    'time': '耗时(s)',
    'evals': '模型调用次数',
    'iterations': '迭代次数',
    'final_loss': '最终损失',
    'diverged': '发散',
    'timed_out': '超时',
    'error': '错误',
    'config_hash': '配置哈希',
}

CELL_COLUMNS = {
    'label': '格子',
    'planner': '规划器',
    'horizon': '规划步长',
    'trials': '试验数',
    'successes': '成功数',
    'success_rate': '成功率',
    'ci_half_width': '95%置信半宽',
    'median_evals': '中位模型调用(仅成功)',
    'median_time': '中位耗时(仅成功)',
    'diverged': '发散数',
    'timed_out': '超时数',
    'errors': '错误数',
}


def _ensure_folder(path):
    folder = os.path.dirname(path)
    if folder and not os.path.exists(folder):
        os.makedirs(folder)


def dump_json(payload):
    """稳定键序、UTF-8 原样输出"""
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True)


def write_json(payload, path):
    _ensure_folder(path)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(dump_json(payload))
        f.write('\n')
    harness_logger.info(f"JSON 已写出: {path}")
    return path


def trials_to_frame(trials):
    rows = [t.to_dict() if hasattr(t, 'to_dict') else dict(t) for t in trials]
    df = pd.DataFrame(rows)
    columns = [c for c in TRIAL_COLUMNS if c in df.columns]
    return df[columns]


def cells_to_frame(cells):
    df = pd.DataFrame(list(cells))
    columns = [c for c in CELL_COLUMNS if c in df.columns]
    return df[columns]


def write_csv(frame, path):
    _ensure_folder(path)
    frame.to_csv(path, index=False, float_format='%.17g', encoding='utf-8')
    harness_logger.info(f"CSV 已写出: {path} ({len(frame)} 行)")
    return path


def write_trials_csv(trials, path):
    return write_csv(trials_to_frame(trials), path)


def _style_sheet(ws, frame):
    header_font = Font(bold=True)
    header_fill = PatternFill(start_color='FFDDEBF7', end_color='FFDDEBF7', fill_type='solid')
    for cell in ws[1]:
        cell.font = header_font
        cell.fill = header_fill
        cell.alignment = Alignment(horizontal='center', vertical='center')
    for idx, column in enumerate(frame.columns, start=1):
        values = [str(column)] + [str(v) for v in frame[column].head(200).tolist()]
        width = min(max(len(v) for v in values) + 4, 40)
        ws.column_dimensions[get_column_letter(idx)].width = width
    ws.freeze_panes = 'A2'


def write_battery_excel(battery, path):
    """两个工作表：格子汇总与逐试验明细"""
    _ensure_folder(path)
    cells = cells_to_frame(battery.cells).rename(columns=CELL_COLUMNS)
    trials = trials_to_frame(battery.trials).rename(columns=TRIAL_COLUMNS)
    with pd.ExcelWriter(path, engine='openpyxl') as writer:
        cells.to_excel(writer, index=False, sheet_name='格子汇总')
        trials.to_excel(writer, index=False, sheet_name='试验明细')
        _style_sheet(writer.sheets['格子汇总'], cells)
        _style_sheet(writer.sheets['试验明细'], trials)
    harness_logger.info(f"Excel 已写出: {path}")
    return path


def write_battery(battery, out_dir, name='bench', excel=False):
    """试验组输出：<name>.json、<name>_trials.csv，可选 <name>.xlsx；返回写出的路径"""
    json_path = os.path.join(out_dir, f'{name}.json')
    csv_path = os.path.join(out_dir, f'{name}_trials.csv')
    paths = {
        'report': write_json(battery.to_dict(), json_path),
        'trials': write_trials_csv(battery.trials, csv_path),
    }
    if excel:
        paths['excel'] = write_battery_excel(battery, os.path.join(out_dir, f'{name}.xlsx'))
    return paths
