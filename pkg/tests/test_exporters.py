import json

import pandas as pd
import pytest
from openpyxl import load_workbook

from utils.exporters import (CELL_COLUMNS, TRIAL_COLUMNS, cells_to_frame, dump_json, write_battery, write_json,
                             write_trials_csv)
from utils.trial_runner import run_bench, trials_from_frame

BENCH = {
    'name': 'export_demo',
    'seed': 2,
    'trials_per_cell': 3,
    'success_radius': 0.05,
    'world': {'id': 'linear', 'params': {'A': [[1.0, 0.0], [0.0, 1.0]], 'B': [[1.0, 0.0], [0.0, 1.0]]}},
    'task': {'family': 'random_reachable', 'params': {'scale': 0.5}},
    'cells': [
        {'label': 'gd', 'planner': 'gd', 'horizon': 4, 'config': {'steps': 100}},
        {'label': 'gd_short', 'planner': 'gd', 'horizon': 4, 'config': {'steps': 1}},
    ],
}


@pytest.fixture
def battery():
    return run_bench(dict(BENCH))


def test_dump_json_keeps_unicode_and_sorts_keys():
    text = dump_json({'b': 1, 'a': '格子'})
    assert text.index('"a"') < text.index('"b"')
    assert '格子' in text


def test_write_json_creates_folders(tmp_path):
    path = write_json({'x': [1, 2]}, str(tmp_path / 'a' / 'b' / 'out.json'))
    assert json.loads(open(path, encoding='utf-8').read()) == {'x': [1, 2]}


def test_write_battery(tmp_path, battery):
    paths = write_battery(battery, str(tmp_path), name='export_demo')
    assert set(paths) == {'report', 'trials'}
    report = json.loads(open(paths['report'], encoding='utf-8').read())
    assert [c['label'] for c in report['cells']] == ['gd', 'gd_short']
    assert report['config']['name'] == 'export_demo'
    frame = pd.read_csv(paths['trials'])
    assert list(frame.columns) == list(TRIAL_COLUMNS)
    assert len(frame) == 6
    assert paths['trials'].endswith('export_demo_trials.csv')


def test_trials_round_trip_through_csv(tmp_path, battery):
    path = write_trials_csv(battery.trials, str(tmp_path / 'trials.csv'))
    restored = trials_from_frame(pd.read_csv(path))
    assert [(t.label, t.index, t.success, t.evals) for t in restored] == \
        [(t.label, t.index, t.success, t.evals) for t in battery.trials]
    assert all(t.error is None for t in restored)
    assert [t.final_distance for t in restored] == [t.final_distance for t in battery.trials]


def test_cells_frame_keeps_known_columns(battery):
    frame = cells_to_frame(battery.cells)
    assert list(frame.columns) == [c for c in CELL_COLUMNS if c != 'median_time']
    assert frame.loc[0, 'success_rate'] == 1.0


def test_excel_workbook(tmp_path, battery):
    paths = write_battery(battery, str(tmp_path), name='export_demo', excel=True)
    workbook = load_workbook(paths['excel'])
    assert workbook.sheetnames == ['格子汇总', '试验明细']
    cells = workbook['格子汇总']
    assert cells['A1'].value == '格子'
    assert cells['A1'].font.bold
    assert cells.freeze_panes == 'A2'
    assert workbook['试验明细'].max_row == 7
