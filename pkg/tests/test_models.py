import numpy as np
import pytest

from models.base import CountingModel, Trajectory, batch_forward, rollout, rollout_batch, rollout_linearized
from models.linear import LinearModel
from models.mlp import collect_transitions, train_mlp
from models.model_store import load_model, model_from_document, model_to_document, save_model
from models.wall_world import WallWorld
from numerics import ArgumentError, DivergenceError, RngStream, TrainingError
from tests.oracles import ClampWorld, central_jacobian, wall_forward_from_potential
from utils.worlds import gap_walls


def _sample_points(seed, count, x_span=0.2, y_span=0.7):
    stream = RngStream(seed)
    states = np.column_stack([stream.uniform(-x_span, x_span, count), stream.uniform(-y_span, y_span, count)])
    actions = stream.uniform(-1.0, 1.0, (count, 2))
    return states, actions


def _jacobian_error(model, s, a):
    jac_s, jac_a = model.jacobians(s, a)
    fd_s = central_jacobian(lambda x: model.forward(x, a), s)
    fd_a = central_jacobian(lambda x: model.forward(s, x), a)
    return (np.linalg.norm(fd_s - jac_s) / (np.linalg.norm(jac_s) + 1e-2),
            np.linalg.norm(fd_a - jac_a) / (np.linalg.norm(jac_a) + 1e-2))


class TestTrajectory:
    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            Trajectory(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_properties(self):
        traj = Trajectory(np.arange(6.0).reshape(3, 2), np.zeros((2, 1)))
        assert traj.horizon == 2
        assert np.array_equal(traj.terminal, [4.0, 5.0])


class TestLinearModel:
    def test_forward(self, linear_model):
        s, a = np.array([1.0, 2.0]), np.array([0.5, -1.0])
        expected = linear_model.A @ s + linear_model.B @ a
        assert np.allclose(linear_model.forward(s, a), expected, atol=1e-15)

    def test_jacobians_are_A_and_B(self, linear_model):
        jac_s, jac_a = linear_model.jacobians(np.zeros(2), np.zeros(2))
        assert np.allclose(jac_s, linear_model.A, atol=1e-15)
        assert np.allclose(jac_a, linear_model.B, atol=1e-15)

    def test_rejects_bad_shapes(self):
        with pytest.raises(ArgumentError):
            LinearModel(np.eye(2), np.ones((3, 1)))
        with pytest.raises(ArgumentError):
            LinearModel(np.ones((2, 3)), np.ones((2, 1)))

    def test_forward_dim_mismatch(self, linear_model):
        with pytest.raises(ArgumentError):
            linear_model.forward([1.0, 2.0, 3.0], [0.0, 0.0])


class TestBatchConsistency:
    @pytest.mark.parametrize('name', ['linear_model', 'wall_world', 'bounded_wall_world', 'mlp_model'])
    @pytest.mark.parametrize('workers', [1, 4])
    def test_batch_equals_single(self, request, name, workers):
        model = request.getfixturevalue(name)
        states, actions = _sample_points(3, 600)
        cot = RngStream(8).standard_normal((600, 2))
        fwd = model.batch_forward(states, actions, workers=workers)
        vs = model.batch_vjp_state(states, actions, cot, workers=workers)
        va = model.batch_vjp_action(states, actions, cot, workers=workers)
        for i in range(0, 600, 37):
            assert np.array_equal(fwd[i], model.forward(states[i], actions[i]))
            assert np.array_equal(vs[i], model.vjp_state(states[i], actions[i], cot[i]))
            assert np.array_equal(va[i], model.vjp_action(states[i], actions[i], cot[i]))

    def test_module_batch_forward(self, linear_model):
        pairs = [(np.array([1.0, 0.0]), np.array([0.0, 1.0])), (np.zeros(2), np.ones(2))]
        out = batch_forward(linear_model, pairs)
        assert np.array_equal(out[1], linear_model.forward(np.zeros(2), np.ones(2)))
        assert batch_forward(linear_model, []).shape == (0, 2)

    def test_batch_shape_errors(self, linear_model):
        with pytest.raises(ArgumentError):
            linear_model.batch_forward(np.zeros((3, 2)), np.zeros((2, 2)))


class TestLinearize:
    @pytest.mark.parametrize('name', ['linear_model', 'wall_world', 'bounded_wall_world', 'mlp_model'])
    def test_matches_forward_and_jacobians(self, request, name):
        model = request.getfixturevalue(name)
        states, actions = _sample_points(41, 25)
        nxt, jac_s, jac_a = model.batch_linearize(states, actions)
        assert jac_s.shape == (25, 2, 2) and jac_a.shape == (25, 2, 2)
        for i in range(25):
            ref_s, ref_a = model.jacobians(states[i], actions[i])
            assert np.allclose(nxt[i], model.forward(states[i], actions[i]), rtol=0, atol=1e-14)
            assert np.allclose(jac_s[i], ref_s, rtol=1e-12, atol=1e-13)
            assert np.allclose(jac_a[i], ref_a, rtol=1e-12, atol=1e-13)

    def test_default_builds_jacobians_from_vjps(self):
        world = ClampWorld(shift=0.0)
        nxt, jac_s, jac_a = world.linearize_rows(np.array([[1.0], [1.0]]), np.array([[0.5], [3.0]]))
        assert np.array_equal(nxt, [[1.5], [2.0]])
        assert np.array_equal(jac_s, np.ones((2, 1, 1)))
        assert np.array_equal(jac_a[:, 0, 0], [1.0, 0.0])

    @pytest.mark.parametrize('workers', [1, 4])
    def test_workers_do_not_change_result(self, wall_world, workers):
        states, actions = _sample_points(9, 600)
        single = wall_world.batch_linearize(states, actions)
        split = wall_world.batch_linearize(states, actions, workers=workers)
        for a, b in zip(single, split):
            assert np.array_equal(a, b)

    def test_rollout_linearized_matches_rollout(self, bounded_wall_world):
        actions = RngStream(12).standard_normal((9, 2))
        s0 = np.array([-0.3, 0.1])
        traj, jac_s, jac_a = rollout_linearized(bounded_wall_world, s0, actions)
        assert np.array_equal(traj.states, rollout(bounded_wall_world, s0, actions).states)
        for t in range(9):
            ref_s, ref_a = bounded_wall_world.jacobians(traj.states[t], actions[t])
            assert np.allclose(jac_s[t], ref_s, rtol=1e-12, atol=1e-13)
            assert np.allclose(jac_a[t], ref_a, rtol=1e-12, atol=1e-13)

    def test_rollout_linearized_divergence(self):
        model = LinearModel(1e7 * np.eye(2), np.eye(2))
        with pytest.raises(DivergenceError) as info:
            rollout_linearized(model, np.ones(2), np.zeros((5, 2)))
        assert info.value.step == 2


class TestWallWorld:
    def test_free_space_is_exact_translation(self):
        world = WallWorld(step_scale=0.1)
        s, a = np.array([0.3, -0.2]), np.array([1.0, 2.0])
        assert np.array_equal(world.forward(s, a), s + 0.1 * a)

    def test_action_bound_limits_step(self):
        world = WallWorld(action_bound=1.0)
        step = world.forward(np.zeros(2), np.array([100.0, 0.0]))
        assert step[0] <= 0.1 + 1e-15

    def test_wall_pushes_out(self, wall_world):
        out = wall_world.forward(np.array([-0.1, 0.0]), np.array([0.5, 0.0]))
        assert out[0] < -0.05

    @pytest.mark.parametrize('name', ['wall_world', 'bounded_wall_world'])
    def test_jacobians_match_finite_differences(self, request, name):
        world = request.getfixturevalue(name)
        states, actions = _sample_points(21, 100)
        for s, a in zip(states, actions):
            jac_s, jac_a = world.jacobians(s, a)
            fd_s = central_jacobian(lambda x: world.forward(x, a), s)
            fd_a = central_jacobian(lambda x: world.forward(s, x), a)
            assert np.linalg.norm(fd_s - jac_s) <= 1e-5 * np.linalg.norm(jac_s) + 1e-7
            assert np.linalg.norm(fd_a - jac_a) <= 1e-5 * np.linalg.norm(jac_a) + 1e-7

    def test_state_jacobian_symmetric(self, wall_world):
        jac_s, _ = wall_world.jacobians(np.array([-0.06, 0.3]), np.array([0.4, 0.1]))
        assert np.allclose(jac_s, jac_s.T, atol=1e-14)

    def test_jacobian_continuous_at_segment_end(self):
        # 墙段从 y = 0.33 开始；x = 0.05 在墙厚度内，推力非零
        world = WallWorld(walls=[[[0.0, 0.33], [0.0, 2.0], 0.08]])
        a = np.zeros(2)
        below, _ = world.jacobians(np.array([0.05, 0.33 - 1e-7]), a)
        above, _ = world.jacobians(np.array([0.05, 0.33 + 1e-7]), a)
        assert np.linalg.norm(above - below) < 1e-3
        for s in ([0.05, 0.33], [0.02, 0.33], [0.05, 2.0], [0.0, 0.3]):
            s = np.array(s)
            jac_s, _ = world.jacobians(s, a)
            fd_s = central_jacobian(lambda x: world.forward(x, a), s)
            assert np.linalg.norm(fd_s - jac_s) <= 1e-5 * np.linalg.norm(jac_s) + 1e-7
            assert np.allclose(jac_s, jac_s.T, atol=1e-13)

    def test_forward_matches_potential_oracle(self):
        world = WallWorld(walls=gap_walls())
        states, actions = _sample_points(5, 30, x_span=0.3, y_span=1.2)
        for s, a in zip(states, actions):
            assert np.allclose(world.forward(s, a), wall_forward_from_potential(world, s, a), atol=1e-6)

    def test_invalid_walls(self):
        with pytest.raises(ArgumentError):
            WallWorld(walls=[[[0.0, 0.0], [0.0, 0.0], 0.1]])
        with pytest.raises(ArgumentError):
            WallWorld(walls=[[[0.0, 0.0], [0.0, 1.0], -0.1]])


class TestMlp:
    def test_jacobians_match_finite_differences(self, mlp_model):
        states, actions = _sample_points(31, 20, 1.0, 1.0)
        for s, a in zip(states, actions):
            err_s, err_a = _jacobian_error(mlp_model, s, a)
            assert err_s < 1e-6 and err_a < 1e-6

    def test_widths_and_parameters(self, mlp_model):
        assert mlp_model.widths == [8, 8]
        assert mlp_model.parameter_count == 4 * 8 + 8 + 8 * 8 + 8 + 8 * 2 + 2

    def test_linear_world_fits_exactly_without_hidden_layers(self, linear_model):
        rng = RngStream(0)
        data = collect_transitions(linear_model, 400, rng.derive('data'))
        model = train_mlp(data, widths=(), epochs=0, rng=rng.derive('train'))
        assert model.training_loss < 1e-20
        s, a = np.array([0.2, -0.4]), np.array([1.0, 0.5])
        assert np.allclose(model.forward(s, a), linear_model.forward(s, a), atol=1e-10)

    def test_training_error_carries_loss(self):
        world = WallWorld(walls=gap_walls())
        rng = RngStream(1)
        data = collect_transitions(world, 300, rng.derive('data'))
        with pytest.raises(TrainingError) as info:
            train_mlp(data, widths=(3,), epochs=1, rng=rng.derive('train'), threshold=1e-14)
        assert info.value.final_loss > 1e-14

    def test_training_requires_rng(self, linear_model):
        data = collect_transitions(linear_model, 10, RngStream(0))
        with pytest.raises(ArgumentError):
            train_mlp(data, widths=(), epochs=0)

    def test_constant_dataset_is_memorized(self):
        s, a = np.array([0.3, -0.2]), np.array([0.5, 0.5])
        target = np.array([0.34, -0.17])
        data = tuple(np.tile(x, (50, 1)) for x in (s, a, target))
        model = train_mlp(data, widths=(8,), epochs=20, rng=RngStream(4))
        assert model.training_loss < 1e-10
        assert np.allclose(model.forward(s, a), target, atol=1e-5)

    @pytest.mark.slow
    def test_wall_world_default_widths_meet_threshold(self):
        world = WallWorld(walls=gap_walls(), action_bound=1.0)
        rng = RngStream(0)
        data = collect_transitions(world, 10000, rng.derive('data'))
        model = train_mlp(data, widths=(64, 64), epochs=500, rng=rng.derive('train'))
        assert model.widths == [64, 64]
        assert model.training_loss < 1e-3


class TestRollout:
    def test_rollout_linear(self, linear_model):
        actions = RngStream(2).standard_normal((5, 2))
        traj = rollout(linear_model, [1.0, 0.0], actions)
        s = np.array([1.0, 0.0])
        for t in range(5):
            s = linear_model.forward(s, actions[t])
        assert np.array_equal(traj.terminal, s)

    def test_divergence_reports_step(self):
        model = LinearModel(10.0 * np.eye(2), np.eye(2))
        with pytest.raises(DivergenceError) as info:
            rollout(model, [1.0, 0.0], np.zeros((20, 2)))
        assert info.value.step == 13

    def test_unchecked_rollout_keeps_going(self):
        model = LinearModel(10.0 * np.eye(2), np.eye(2))
        traj = rollout(model, [1.0, 0.0], np.zeros((20, 2)), check=False)
        assert traj.terminal[0] == pytest.approx(1e20)

    def test_rollout_batch_matches_single(self, wall_world):
        actions = RngStream(6).standard_normal((7, 9, 2))
        s0 = np.array([-0.4, 0.2])
        states = rollout_batch(wall_world, s0, actions)
        for p in range(7):
            assert np.array_equal(states[p], rollout(wall_world, s0, actions[p]).states)

    def test_state_noise_is_added(self, linear_model):
        noise = np.ones((3, 2))
        clean = rollout(linear_model, np.zeros(2), np.zeros((3, 2)))
        noisy = rollout(linear_model, np.zeros(2), np.zeros((3, 2)), state_noise=noise)
        assert not np.array_equal(clean.states, noisy.states)
        assert np.array_equal(noisy.states[1], [1.0, 1.0])


class TestCountingModel:
    def test_counts_rows(self, linear_model):
        counting = CountingModel(linear_model)
        counting.batch_forward(np.zeros((5, 2)), np.zeros((5, 2)))
        counting.vjp_action(np.zeros(2), np.zeros(2), np.ones(2))
        assert counting.evals == 6
        assert counting.kind == 'linear'

    def test_linearize_counts_each_row_once(self, linear_model):
        counting = CountingModel(linear_model)
        counting.batch_linearize(np.zeros((4, 2)), np.zeros((4, 2)))
        assert counting.evals == 4


class TestModelStore:
    @pytest.mark.parametrize('name', ['linear_model', 'wall_world', 'mlp_model'])
    def test_save_and_load(self, request, tmp_path, name):
        model = request.getfixturevalue(name)
        path = tmp_path / 'nested' / f'{name}.json'
        save_model(model, str(path), seed=3, training_loss=0.5)
        loaded, metadata = load_model(str(path))
        assert metadata['seed'] == 3
        assert np.array_equal(model.describe()['parameters'], loaded.describe()['parameters'])
        s, a = np.array([-0.05, 0.1]), np.array([0.3, -0.2])
        assert np.array_equal(model.forward(s, a), loaded.forward(s, a))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_model(str(tmp_path / 'missing.json'))

    def test_unknown_type(self, linear_model):
        document = model_to_document(linear_model)
        document['type'] = 'quadrotor'
        with pytest.raises(ArgumentError):
            model_from_document(document)

    def test_dims_mismatch(self, linear_model):
        document = model_to_document(linear_model)
        document['dims']['state_dim'] = 3
        with pytest.raises(ArgumentError):
            model_from_document(document)


class TestClosedForms:
    def test_linear_forward_by_hand(self):
        model = LinearModel(2.0 * np.eye(2), np.eye(2))
        assert np.array_equal(model.forward(np.array([1.0, 0.0]), np.array([0.0, 1.0])), [2.0, 1.0])
        assert np.array_equal(model.vjp_state(np.zeros(2), np.zeros(2), np.array([1.0, -1.0])), [2.0, -2.0])

    def test_geometric_growth(self):
        traj = rollout(LinearModel([[2.0]], [[1.0]]), [1.0], np.zeros((3, 1)))
        assert traj.states.ravel().tolist() == [1.0, 2.0, 4.0, 8.0]

    def test_identity_rollout_stays_at_zero(self):
        traj = rollout(LinearModel(np.eye(2), np.eye(2)), np.zeros(2), np.zeros((5, 2)))
        assert not np.any(traj.states)

    def test_free_space_vjps(self):
        world = WallWorld(step_scale=0.1)
        cot = np.array([0.7, -1.2])
        s, a = np.array([3.0, 3.0]), np.array([0.2, 0.1])
        assert np.array_equal(world.vjp_state(s, a, cot), cot)
        assert np.allclose(world.vjp_action(s, a, cot), 0.1 * cot, atol=1e-16)

    def test_wall_resists_motion(self, wall_world):
        actions = np.tile([1.0, 0.0], (10, 1))
        s0 = np.array([-0.33, 0.0])
        traj = rollout(wall_world, s0, actions)
        assert np.linalg.norm(traj.terminal - s0) < 0.1 * np.sum(np.linalg.norm(actions, axis=1))
        assert traj.terminal[0] < 0.0
