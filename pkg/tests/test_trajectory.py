"""Rollout execution and trajectory cost evaluation."""

import numpy as np
import pytest

from trajrl.costs import pose_cost
from trajrl.envs import linear_env
from trajrl.errors import ControllerInvalidError, DivergenceError
from trajrl.lqg import LinearGaussianController, init_controller
from trajrl.riccati import oracle_for_env
from trajrl.trajectory import (
    Trajectory,
    generate_smoothed_noise,
    rollout,
    score_trajectory,
    trajectory_total_cost,
)


@pytest.fixture
def env():
    return linear_env()


def zero_noise(T, d_u):
    return generate_smoothed_noise(T, d_u, 0.0, seed=0).scaled(0.0)


def test_null_control_stays_at_fixed_point(env):
    ctrl = init_controller(env.horizon, env.d_x, env.d_u, 1.0)
    x0 = np.zeros(env.d_x)  # origin with zero velocity is a fixed point
    traj = rollout(env, ctrl, x0, zero_noise(env.horizon, env.d_u))
    assert np.allclose(traj.states, 0.0)


def test_identity_covariance_applies_noise_rows_exactly(env):
    T = env.horizon
    ctrl = init_controller(T, env.d_x, env.d_u, 1.0)  # C = I, K = k = 0
    noise = generate_smoothed_noise(T, env.d_u, 2.0, seed=9)
    traj = rollout(env, ctrl, env.x0, noise)
    assert np.allclose(traj.actions, noise.values)


def test_lqr_optimal_rollout_matches_riccati_cost(env):
    # Independent oracle: Riccati recursion on the true dynamics.
    cost = pose_cost(env.layout, env.target)
    oracle = oracle_for_env(env, cost)
    ctrl = LinearGaussianController(
        K=oracle.K, k=oracle.k, C=np.tile(1e-12 * np.eye(env.d_u), (env.horizon, 1, 1))
    )
    traj = rollout(env, ctrl, env.x0, zero_noise(env.horizon, env.d_u))
    achieved = trajectory_total_cost(traj, cost)
    expected = oracle.optimal_cost(env.x0)
    assert achieved == pytest.approx(expected, rel=1e-8)


def test_rollout_is_purely_functional(env):
    ctrl = init_controller(env.horizon, env.d_x, env.d_u, 0.3)
    noise = generate_smoothed_noise(env.horizon, env.d_u, 2.0, seed=4)
    a = rollout(env, ctrl, env.x0, noise)
    b = rollout(env, ctrl, env.x0, noise)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.actions, b.actions)


def test_non_positive_definite_covariance_raises(env):
    T = env.horizon
    C = np.tile(np.eye(env.d_u), (T, 1, 1))
    C[3] = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    ctrl = LinearGaussianController(
        K=np.zeros((T, env.d_u, env.d_x)), k=np.zeros((T, env.d_u)), C=C
    )
    with pytest.raises(ControllerInvalidError) as excinfo:
        rollout(env, ctrl, env.x0, zero_noise(T, env.d_u))
    assert excinfo.value.timestep == 3


def test_divergence_error_identifies_timestep(env):
    T = env.horizon
    K = np.zeros((T, env.d_u, env.d_x))
    K[:, :, 0] = 1e200  # immediate overflow through the position feedback
    ctrl = LinearGaussianController(
        K=K, k=np.zeros((T, env.d_u)), C=np.tile(np.eye(env.d_u), (T, 1, 1))
    )
    with pytest.raises(DivergenceError) as excinfo:
        rollout(env, ctrl, env.x0, zero_noise(T, env.d_u))
    assert 0 <= excinfo.value.timestep < T


def test_noise_shape_mismatch_rejected(env):
    ctrl = init_controller(env.horizon, env.d_x, env.d_u, 1.0)
    bad = generate_smoothed_noise(env.horizon + 1, env.d_u, 0.0, seed=0)
    with pytest.raises(ValueError):
        rollout(env, ctrl, env.x0, bad)


class TestTotalCost:
    def test_zero_state_zero_action_is_free(self, env):
        cost = pose_cost(env.layout, np.zeros(2))
        T = env.horizon
        traj = Trajectory(np.zeros((T + 1, env.d_x)), np.zeros((T, env.d_u)))
        assert trajectory_total_cost(traj, cost) == 0.0

    def test_single_step_trajectory_uses_final_variant(self, env):
        # A one-step trajectory has exactly one cost term, evaluated with the
        # final-step formula (10x pose weight, no control term).
        cost = pose_cost(env.layout, np.zeros(2))
        states = np.zeros((2, env.d_x))
        states[0, 0] = 1.0
        traj = Trajectory(states, np.zeros((1, env.d_u)))
        assert trajectory_total_cost(traj, cost) == pytest.approx(10.0)

    def test_matches_pointwise_summation_oracle(self, env):
        # Independent oracle: evaluate the raw cost pointwise and sum.
        cost = pose_cost(env.layout, np.array([0.3, -0.2]))
        gen = np.random.default_rng(0)
        T = env.horizon
        traj = Trajectory(
            gen.standard_normal((T + 1, env.d_x)), gen.standard_normal((T, env.d_u))
        )
        expected = sum(
            cost.evaluate(traj.states[t], traj.actions[t], t, T) for t in range(T)
        )
        assert trajectory_total_cost(traj, cost) == pytest.approx(expected, rel=1e-12)

    def test_score_trajectory_populates_step_costs(self, env):
        cost = pose_cost(env.layout, np.zeros(2))
        gen = np.random.default_rng(1)
        T = env.horizon
        traj = Trajectory(
            gen.standard_normal((T + 1, env.d_x)), gen.standard_normal((T, env.d_u))
        )
        scored = score_trajectory(traj, cost)
        assert scored.step_costs.shape == (T,)
        assert scored.total_cost == pytest.approx(float(np.sum(scored.step_costs)))


def test_trajectory_shape_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((5, 3)), np.zeros((5, 2)))  # needs 6 states
    with pytest.raises(ValueError):
        Trajectory(np.zeros((6, 3)), np.zeros((5, 2)), step_costs=np.zeros(4))


def test_trajectory_serialization_roundtrip():
    from trajrl.serialize import trajectory_from_json, trajectory_to_json, dumps_json
    import json

    gen = np.random.default_rng(2)
    traj = Trajectory(gen.standard_normal((4, 3)), gen.standard_normal((3, 2)))
    payload = json.loads(dumps_json(trajectory_to_json(traj)))
    back = trajectory_from_json(payload)
    assert np.array_equal(back.states, traj.states)
    assert np.array_equal(back.actions, traj.actions)
    assert payload["T"] == 3
