import json
import math

import numpy as np
import pytest

from models.base import rollout
from numerics import ConfigError, RngStream, TrialFailedError
from planners.registry import planner_ids
from utils.objectives import flat_center, flat_loss, unpack_lifted
from utils.trial_runner import (BatteryManager, TrialReport, TrialSpec, cumulative_success_curve, derive_seed,
                                distance_profile, emit_landscape, execute_trial, expand_bench_config,
                                load_bench_config, load_trial_spec, run_battery, run_bench, run_trial,
                                summarize_cell, verify_success, wald_half_width)
from utils.worlds import build_world, clear_world_cache, gap_walls, make_task

FREE_WORLD = {'id': 'wall', 'params': {}}
IDENTITY_WORLD = {'id': 'linear', 'params': {'A': [[1.0, 0.0], [0.0, 1.0]], 'B': [[1.0, 0.0], [0.0, 1.0]]}}
GAP_WORLD = {'id': 'wall', 'params': {'preset': 'gap', 'action_bound': 1.0}}
AT_GOAL = {'family': 'fixed', 'params': {'s0': [0.3, 0.3], 'g': [0.3, 0.3]}}

SMALL_CONFIGS = {
    'gd': {'steps': 5},
    'gd_noisy': {'steps': 5, 'sigma_a': 0.01},
    'lifted': {'steps': 5},
    'grasp': {'steps': 5},
    'cem': {'population': 16, 'elites': 4, 'iterations': 2},
}


def _spec(**overrides):
    values = dict(world=IDENTITY_WORLD, planner='gd', horizon=4, success_radius=0.05, seed=0,
                  config={'steps': 200}, task={'family': 'fixed', 'params': {'s0': [0.0, 0.0], 'g': [1.0, 1.0]}})
    values.update(overrides)
    return TrialSpec(**values)


def _bench(**overrides):
    config = {
        'name': 'small',
        'seed': 5,
        'trials_per_cell': 3,
        'success_radius': 0.1,
        'world': GAP_WORLD,
        'task': {'family': 'wall_detour'},
        'cells': [
            {'label': 'gd', 'planner': 'gd', 'horizon': 10, 'config': {'steps': 20}},
            {'label': 'grasp', 'planner': 'grasp', 'horizons': [8, 10], 'config': {'steps': 20, 'K_sync': 10}},
        ],
    }
    config.update(overrides)
    return config


class TestTrialSpec:
    def test_success_radius_is_required(self):
        with pytest.raises(ConfigError):
            _spec(success_radius=None)
        with pytest.raises(ConfigError):
            _spec(success_radius=0.0)

    @pytest.mark.parametrize('overrides', [
        {'horizon': 0},
        {'horizon': 2.5},
        {'planner': 'ilqr'},
        {'config': {'stpes': 3}},
    ])
    def test_invalid_fields(self, overrides):
        with pytest.raises(ConfigError):
            _spec(**overrides)

    def test_config_is_resolved(self):
        spec = _spec(planner='grasp', config={'steps': 3})
        assert spec.config['steps'] == 3
        assert spec.config['K_sync'] == 100
        assert spec.label == 'grasp'

    def test_fingerprint_ignores_seed_and_position(self):
        a = _spec(seed=1, index=0, label='x')
        b = _spec(seed=2, index=7, label='y')
        assert a.fingerprint == b.fingerprint
        assert len(a.fingerprint) == 16
        assert _spec(config={'steps': 201}).fingerprint != a.fingerprint


class TestTrial:
    @pytest.mark.parametrize('planner', sorted(SMALL_CONFIGS))
    def test_start_at_goal_succeeds(self, planner):
        report = run_trial(_spec(planner=planner, config=SMALL_CONFIGS[planner], task=AT_GOAL))
        assert report.success
        assert report.final_distance == 0.0
        assert report.error is None

    def test_every_registered_planner_is_covered(self):
        assert sorted(SMALL_CONFIGS) == planner_ids()

    def test_reachable_linear_goal(self):
        report = run_trial(_spec())
        assert report.success
        assert report.final_distance < 0.05
        assert report.evals > 0
        assert report.final_loss < 0.05 ** 2

    def test_timeout_is_a_failure(self):
        report = run_trial(_spec(time_limit=1e-9))
        assert report.timed_out
        assert not report.diverged
        assert not report.success

    def test_verify_success_detects_tampering(self):
        spec = _spec()
        report = run_trial(spec)
        assert verify_success(spec, report)
        report.actions = np.zeros((4, 2)).tolist()
        assert not verify_success(spec, report)

    def test_same_seed_same_report(self):
        spec = _spec(world=GAP_WORLD, planner='grasp', config={'steps': 30, 'sigma_state': 0.1},
                     task={'family': 'wall_detour'}, horizon=12, seed=9)
        a, b = run_trial(spec).to_dict(), run_trial(spec).to_dict()
        a.pop('time')
        b.pop('time')
        assert a == b

    def test_to_dict_hides_actions_by_default(self):
        report = run_trial(_spec())
        assert 'actions' not in report.to_dict()
        assert len(report.to_dict(include_actions=True)['actions']) == 4


class TestBattery:
    def test_wald(self):
        assert wald_half_width(0.5, 500) == pytest.approx(0.0438, abs=1e-4)
        assert wald_half_width(1.0, 10) == 0.0
        assert wald_half_width(0.3, 0) == 0.0

    def test_single_trial_battery(self):
        spec = _spec()
        battery = run_battery([spec])
        single = run_trial(spec).to_dict()
        recorded = battery.trials[0].to_dict()
        single.pop('time')
        recorded.pop('time')
        assert recorded == single
        cell = battery.cell('gd')
        assert cell['trials'] == 1 and cell['success_rate'] == 1.0

    def test_summary_medians_use_successes_only(self):
        reports = [
            TrialReport(True, 1.0, 10, 0.0, 1, False, False, 'h', label='c', horizon=4),
            TrialReport(True, 3.0, 30, 0.0, 1, False, False, 'h', label='c', horizon=4),
            TrialReport(False, 9.0, 999, 1.0, 1, True, False, 'h', label='c', horizon=4),
            TrialReport(False, 0.0, 0, math.inf, 0, False, False, 'h', label='c', horizon=4, error='boom'),
        ]
        work = summarize_cell(reports)
        assert work['median_evals'] == 20.0
        assert work['success_rate'] == 0.5
        assert work['diverged'] == 1 and work['errors'] == 1
        assert 'median_time' not in work
        assert summarize_cell(reports, clock='wall')['median_time'] == 2.0

    def test_no_successes_gives_no_median(self):
        report = TrialReport(False, 1.0, 5, 1.0, 1, False, False, 'h')
        assert summarize_cell([report])['median_evals'] is None

    def test_manager_validation(self):
        with pytest.raises(ConfigError):
            BatteryManager(clock='cpu')
        with pytest.raises(ConfigError):
            BatteryManager().run([])

    def test_failure_is_recorded_without_aborting(self, tmp_path):
        good = _spec(label='good')
        bad = _spec(label='bad', planner_model={'id': 'model_file',
                                                'params': {'path': str(tmp_path / 'missing.json')}})
        battery = run_battery([bad, good], workers=2)
        assert [t.label for t in battery.trials] == ['bad', 'good']
        assert battery.cell('bad')['errors'] == 1
        assert 'FileNotFoundError' in battery.trials[0].error
        assert battery.cell('good')['success_rate'] == 1.0

    def test_workers_do_not_change_report(self):
        single = run_bench(_bench(), workers=1)
        pooled = run_bench(_bench(), workers=4)
        assert single.to_json() == pooled.to_json()
        assert [c['label'] for c in single.cells] == ['gd', 'grasp', 'grasp']
        assert [c['horizon'] for c in single.cells] == [10, 8, 10]

    def test_report_embeds_resolved_config(self):
        battery = run_bench(_bench(), seed=11)
        payload = json.loads(battery.to_json())
        assert payload['config']['seed'] == 11
        assert payload['config']['planners']['grasp']['config']['K_sync'] == 10
        assert payload['config']['planners']['grasp']['config']['gamma'] == 1.0
        assert len(payload['config_hash']) == 16
        assert all(len(cell['config_hash']) == 16 for cell in payload['cells'])
        assert payload['clock'] == 'work'

    def test_wall_clock_adds_median_time(self):
        battery = run_bench(_bench(clock='wall', trials_per_cell=1))
        assert all('median_time' in cell for cell in battery.cells)


class TestBenchConfig:
    def test_paired_task_seeds(self):
        specs = expand_bench_config(_bench())
        by_cell = {}
        for spec in specs:
            by_cell.setdefault((spec.label, spec.horizon), []).append(spec.seed)
        columns = list(by_cell.values())
        assert all(column == columns[0] for column in columns)
        assert len(set(columns[0])) == 3
        assert columns[0][0] == derive_seed(5, 'trial', 0)

    def test_time_limit_needs_wall_clock(self):
        with pytest.raises(ConfigError):
            expand_bench_config(_bench(time_limit=5.0))
        with pytest.raises(ConfigError):
            expand_bench_config(_bench(time_limit=5.0, clock='work'))
        specs = expand_bench_config(_bench(time_limit=5.0, clock='wall'))
        assert all(spec.time_limit == 5.0 for spec in specs)

    def test_seed_override(self):
        base = expand_bench_config(_bench())
        other = expand_bench_config(_bench(), seed=6)
        assert base[0].seed != other[0].seed

    def test_sweep_expansion(self):
        config = _bench(cells=[{'label': 'grasp', 'planner': 'grasp', 'horizon': 8, 'config': {'steps': 5}}],
                        sweep={'sigma_state': [0.0, 0.1], 'gamma': [0.5, 2.0]}, trials_per_cell=1)
        specs = expand_bench_config(config)
        assert len(specs) == 4
        assert specs[0].label == 'grasp[gamma=0.5,sigma_state=0.0]'
        assert specs[0].config['steps'] == 5
        assert {(s.config['gamma'], s.config['sigma_state']) for s in specs} == {
            (0.5, 0.0), (0.5, 0.1), (2.0, 0.0), (2.0, 0.1)}

    @pytest.mark.parametrize('change', [
        {'success_radius': None},
        {'colour': 'red'},
        {'trials_per_cell': 0},
        {'cells': [{'planner': 'gd'}]},
        {'cells': [{'planner': 'gd', 'horizon': 5, 'speed': 1}]},
        {'cells': [{'horizon': 5}]},
    ])
    def test_invalid_configs(self, change):
        with pytest.raises(ConfigError):
            expand_bench_config(_bench(**change))

    def test_missing_world(self):
        config = _bench()
        del config['world']
        with pytest.raises(ConfigError):
            expand_bench_config(config)

    def test_load_bench_resolves_model_paths(self, tmp_path):
        folder = tmp_path / 'configs'
        folder.mkdir()
        config = _bench(planner_model={'id': 'model_file', 'params': {'path': '../results/model.json'}})
        (folder / 'bench.json').write_text(json.dumps(config), encoding='utf-8')
        loaded = load_bench_config(str(folder / 'bench.json'))
        assert loaded['planner_model']['params']['path'] == str(tmp_path / 'results' / 'model.json')

    def test_load_trial_spec(self, tmp_path):
        path = tmp_path / 'trial.json'
        path.write_text(json.dumps({'world': IDENTITY_WORLD, 'planner': 'gd', 'horizon': 3,
                                    'success_radius': 0.1}), encoding='utf-8')
        assert load_trial_spec(str(path)).seed == 0
        assert load_trial_spec(str(path), seed=4).seed == 4

    def test_load_trial_spec_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_trial_spec(str(tmp_path / 'nope.json'))
        broken = tmp_path / 'broken.json'
        broken.write_text('{"world": ', encoding='utf-8')
        with pytest.raises(ConfigError):
            load_trial_spec(str(broken))
        no_radius = tmp_path / 'no_radius.json'
        no_radius.write_text(json.dumps({'world': IDENTITY_WORLD, 'planner': 'gd', 'horizon': 3}), encoding='utf-8')
        with pytest.raises(ConfigError):
            load_trial_spec(str(no_radius))
        extra = tmp_path / 'extra.json'
        extra.write_text(json.dumps({'world': IDENTITY_WORLD, 'planner': 'gd', 'horizon': 3,
                                     'success_radius': 0.1, 'cells': []}), encoding='utf-8')
        with pytest.raises(ConfigError):
            load_trial_spec(str(extra))


class TestOutputs:
    def _reports(self, values):
        return [TrialReport(v is not None, v or 0.0, int(v or 0), 0.0, 1, False, False, 'h') for v in values]

    def test_curve_is_monotone_and_ends_at_success_rate(self):
        reports = self._reports([0.5, 1.5, None, 3.0])
        curve = cumulative_success_curve(reports, [0.0, 1.0, 2.0, 4.0])
        assert curve['success_rate'].tolist() == [0.0, 0.25, 0.5, 0.75]
        assert curve['ci_half_width'].iloc[-1] == pytest.approx(wald_half_width(0.75, 4))
        assert list(curve.columns) == ['tau', 'success_rate', 'ci_half_width']

    def test_curve_by_model_calls(self):
        reports = self._reports([10.0, 30.0])
        curve = cumulative_success_curve(reports, [5, 20, 40], metric='evals')
        assert curve['success_rate'].tolist() == [0.0, 0.5, 1.0]

    def test_all_failures_give_flat_zero_curve(self):
        curve = cumulative_success_curve(self._reports([None, None]), np.linspace(0, 10, 5))
        assert not curve['success_rate'].any()

    def test_landscape_zero_radius(self, tmp_path):
        spec = _spec(config={'steps': 20})
        out = tmp_path / 'landscape.csv'
        field = emit_landscape(spec, 'shooting', 3, 0.0, str(out))
        assert field.shape == (3, 3)
        assert np.all(field == field[0, 0])
        assert len(out.read_text(encoding='utf-8').strip().splitlines()) == 10

    @pytest.mark.parametrize('loss_kind', ['lifted', 'grasp'])
    def test_landscape_lifted_losses(self, tmp_path, loss_kind):
        spec = _spec(planner='grasp', config={'steps': 20})
        field = emit_landscape(spec, loss_kind, 5, 0.5, str(tmp_path / f'{loss_kind}.csv'))
        assert field.shape == (5, 5)
        assert np.all(np.isfinite(field))

    def test_landscape_centers_on_returned_rollout(self, tmp_path):
        spec = _spec(planner='grasp', config={'steps': 20, 'gamma': 0.5})
        field = emit_landscape(spec, 'grasp', 3, 0.5, str(tmp_path / 'grasp.csv'))
        _, context = execute_trial(spec)
        problem, actions = context.problem, context.result.actions
        center = flat_center('grasp', problem, actions)
        assert field[1, 1] == flat_loss('grasp', problem.model, problem, gamma=0.5)(center)
        rolled = rollout(problem.model, problem.s0, actions).states
        assert np.array_equal(unpack_lifted(problem, center).states[1:-1], rolled[1:-1])

    def test_profile_at_goal_is_zero(self):
        frame = distance_profile(_spec(task=AT_GOAL))
        assert frame['t'].tolist() == [0, 1, 2, 3, 4]
        assert not frame['distance'].any()

    def test_profile_requires_success(self):
        with pytest.raises(TrialFailedError):
            distance_profile(_spec(time_limit=1e-9))

    def test_free_space_profile_is_monotone(self):
        spec = _spec(world=FREE_WORLD, horizon=10, config={'steps': 50, 'eta': 5.0},
                     task={'family': 'free_space', 'params': {'distance': 1.0}}, seed=3)
        distances = distance_profile(spec)['distance'].to_numpy()
        assert distances[0] == pytest.approx(1.0)
        assert np.all(np.diff(distances) < 0)


class TestWorlds:
    def test_cache_returns_same_object(self):
        a = build_world(GAP_WORLD)
        assert build_world(json.loads(json.dumps(GAP_WORLD))) is a
        clear_world_cache()
        assert build_world(GAP_WORLD) is not a

    @pytest.mark.parametrize('spec', [
        None,
        {'id': 'pendulum'},
        {'id': 'wall', 'params': {'preset': 'maze'}},
        {'id': 'wall', 'params': {'friction': 1.0}},
        {'id': 'linear', 'params': {'A': [[1.0]]}},
        {'id': 'linear', 'params': {'A': [[1.0]], 'B': [[1.0]], 'D': [[0.0]]}},
        {'id': 'model_file', 'params': {}},
    ])
    def test_invalid_world(self, spec):
        with pytest.raises(ConfigError):
            build_world(spec)

    def test_gap_walls(self):
        walls = gap_walls(gap_center=0.2, gap_width=0.4, thickness=0.05, extent=2.0)
        assert walls[0][0] == pytest.approx([0.0, 0.45]) and walls[0][1] == [0.0, 2.0]
        assert walls[1][0] == [0.0, -2.0] and walls[1][1] == pytest.approx([0.0, -0.05])
        assert walls[0][2] == 0.05
        assert len(build_world(GAP_WORLD).walls) == 2

    def test_wall_detour_geometry(self):
        world = build_world(GAP_WORLD)
        for i in range(50):
            s0, g = make_task({'family': 'wall_detour'}, RngStream(i), world)
            assert s0[0] < 0 < g[0]
            assert np.sign(s0[1]) == np.sign(g[1])
            assert 0.35 <= abs(s0[1]) <= 0.6 and 0.2 <= abs(g[0]) <= 0.5

    def test_free_space_task_distance(self):
        world = build_world(FREE_WORLD)
        s0, g = make_task({'family': 'free_space', 'params': {'distance': 2.0}}, RngStream(1), world)
        assert np.linalg.norm(g - s0) == pytest.approx(2.0)

    def test_invalid_tasks(self):
        world = build_world(FREE_WORLD)
        with pytest.raises(ConfigError):
            make_task({'family': 'spiral'}, RngStream(0), world)
        with pytest.raises(ConfigError):
            make_task({'family': 'fixed', 'params': {'s0': [0.0, 0.0]}}, RngStream(0), world)


@pytest.mark.slow
class TestSeedBatteries:
    def test_workers_one_and_eight_agree(self):
        config = _bench(trials_per_cell=16)
        assert run_bench(config, workers=1).to_json() == run_bench(config, workers=8).to_json()

    def test_wall_detour_profile_is_not_monotone_for_some_seed(self):
        import os
        path = os.path.join(os.path.dirname(os.path.dirname(__file__)), 'configs', 'trial_wall_grasp.json')
        solved = non_monotone = 0
        for seed in range(20):
            try:
                distances = distance_profile(load_trial_spec(path, seed=seed))['distance'].to_numpy()
            except TrialFailedError:
                continue
            solved += 1
            if np.any(np.diff(distances) > 0):
                non_monotone += 1
        assert solved >= 1
        assert non_monotone >= 1
