"""Task cost values and quadratic expansion contracts."""

import numpy as np
import pytest

from trajrl.costs import (
    FunctionCost,
    expand_cost,
    imitation_cost,
    manipulation_cost,
    pose_cost,
    weighted_goal_cost,
)
from trajrl.envs import linear_env, pickup_env
from trajrl.trajectory import Trajectory

T = 12


@pytest.fixture
def linear_layout():
    return linear_env().layout


@pytest.fixture
def pickup_layout():
    return pickup_env().layout


def random_trajectory(gen, T, d_x, d_u):
    return Trajectory(gen.standard_normal((T + 1, d_x)), gen.standard_normal((T, d_u)))


class TestPoseCost:
    def test_zero_at_target(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        for t in range(T):
            assert cost.evaluate(np.zeros(4), np.zeros(2), t, T) == 0.0

    def test_running_and_final_weights(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        x = np.array([2.0, 0.0, 0.5, 0.5])  # ||q||^2 = 4; velocities ignored
        assert cost.evaluate(x, np.zeros(2), 0, T) == pytest.approx(4.0)
        assert cost.evaluate(x, np.zeros(2), T - 1, T) == pytest.approx(40.0)

    def test_control_weight(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        u = np.array([1.0, 0.0])
        assert cost.evaluate(np.zeros(4), u, 0, T) == pytest.approx(0.001)

    def test_final_step_has_no_control_term(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        u = np.array([3.0, 4.0])
        assert cost.evaluate(np.zeros(4), u, T - 1, T) == 0.0

    def test_dimension_mismatch_rejected(self, linear_layout):
        with pytest.raises(ValueError):
            pose_cost(linear_layout, np.zeros(3))


class TestManipulationCost:
    def target_met_state(self, layout):
        x = np.zeros(layout.d_x)
        return x

    def test_zero_when_all_targets_met(self, pickup_layout):
        cost = manipulation_cost(pickup_layout, np.zeros(3), [0.0], [0.0])
        for t in range(T):
            assert cost.evaluate(np.zeros(10), np.zeros(3), t, T) == 0.0

    def test_unit_rotation_error_weights(self, pickup_layout):
        cost = manipulation_cost(pickup_layout, np.zeros(3), [0.0], [0.0])
        x = np.zeros(10)
        x[3] = 1.0  # qrot component
        assert cost.evaluate(x, np.zeros(3), 0, T) == pytest.approx(10.0)
        assert cost.evaluate(x, np.zeros(3), T - 1, T) == pytest.approx(20.0)

    def test_unit_position_error_weight(self, pickup_layout):
        cost = manipulation_cost(pickup_layout, np.zeros(3), [0.0], [0.0])
        x = np.zeros(10)
        x[4] = 1.0  # qpos component
        assert cost.evaluate(x, np.zeros(3), 0, T) == pytest.approx(1.0)

    def test_hand_pose_weight(self, pickup_layout):
        cost = manipulation_cost(pickup_layout, np.zeros(3), [0.0], [0.0])
        x = np.zeros(10)
        x[0] = 1.0
        assert cost.evaluate(x, np.zeros(3), 0, T) == pytest.approx(0.01)

    def test_requires_object_ranges(self, linear_layout):
        with pytest.raises(ValueError):
            manipulation_cost(linear_layout, np.zeros(2), [0.0], [0.0])


class TestImitationCost:
    @pytest.fixture
    def demo(self):
        from trajrl.trajectory import Demonstration

        gen = np.random.default_rng(0)
        states = gen.standard_normal((T + 1, 10))
        return Demonstration(
            Trajectory(states, gen.standard_normal((T, 3))), "test", np.array([0.0])
        )

    def test_zero_on_demo_at_lift_height(self, pickup_layout, demo):
        cost = imitation_cost(pickup_layout, demo, lift_height=0.12, horizon=T)
        for t in range(T):
            x = np.array(demo.trajectory.states[t])
            x[4] = 0.12
            assert cost.evaluate(x, np.zeros(3), t, T) == pytest.approx(0.0)

    def test_lift_term_weight(self, pickup_layout, demo):
        # Object 0.12 below the target height contributes 50 * 0.12^2 = 0.72.
        cost = imitation_cost(pickup_layout, demo, lift_height=0.12, horizon=T)
        x = np.array(demo.trajectory.states[3])
        x[4] = 0.0
        assert cost.evaluate(x, np.zeros(3), 3, T) == pytest.approx(0.72)

    def test_control_weight(self, pickup_layout, demo):
        cost = imitation_cost(pickup_layout, demo, lift_height=0.12, horizon=T)
        x = np.array(demo.trajectory.states[5])
        x[4] = 0.12
        u = np.array([1.0, 0.0, 0.0])
        assert cost.evaluate(x, u, 5, T) == pytest.approx(0.1)

    def test_final_cost_identical_to_running(self, pickup_layout, demo):
        cost = imitation_cost(pickup_layout, demo, lift_height=0.12, horizon=T)
        x = np.array(demo.trajectory.states[T - 1])
        u = np.array([0.5, -0.5, 0.2])
        running_form = (
            float(x[4] - 0.12) ** 2 * 50.0 + 0.1 * float(u @ u)
        )  # shaping term vanishes on the demo state itself
        assert cost.evaluate(x, u, T - 1, T) == pytest.approx(running_form)

    def test_horizon_mismatch_rejected(self, pickup_layout, demo):
        with pytest.raises(ValueError):
            imitation_cost(pickup_layout, demo, lift_height=0.12, horizon=T + 1)


class TestExpandCost:
    def test_quadratic_expansion_exact_anywhere(self, linear_layout):
        cost = pose_cost(linear_layout, np.array([0.5, -0.5]))
        gen = np.random.default_rng(3)
        expansion = expand_cost(cost, [random_trajectory(gen, T, 4, 2)])
        for t in [0, 3, T - 1]:
            x = gen.standard_normal(4)
            u = gen.standard_normal(2)
            expected = cost.evaluate(x, u, t, T)
            got = expansion.value(x, u, t)
            if t == T - 1:
                # The action-block floor adds (1e-6 / 2)||u||^2 at the final
                # step, whose analytic action curvature is zero.
                expected += 0.5e-6 * float(u @ u)
            assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_finite_difference_path_matches_analytic(self, linear_layout):
        # The pinned 1e-5 step puts the cross-difference roundoff floor near
        # 1e-5 absolute in float64, so the agreement tolerance is 1e-4.
        analytic = pose_cost(linear_layout, np.array([0.2, 0.1]))
        numeric = FunctionCost(4, lambda x, u, t, T_: analytic.evaluate(x, u, t, T_))
        gen = np.random.default_rng(4)
        rollouts = [random_trajectory(gen, T, 4, 2)]
        ea = expand_cost(analytic, rollouts)
        en = expand_cost(numeric, rollouts)
        assert np.allclose(en.H, ea.H, rtol=1e-4, atol=1e-4)
        assert np.allclose(en.g, ea.g, rtol=1e-4, atol=1e-4)
        assert np.allclose(en.c, ea.c, rtol=1e-4, atol=1e-3)

    def test_single_rollout_equals_average_of_one(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        gen = np.random.default_rng(5)
        traj = random_trajectory(gen, T, 4, 2)
        one = expand_cost(cost, [traj])
        same = expand_cost(cost, [traj, traj, traj])
        assert np.allclose(one.H, same.H) and np.allclose(one.g, same.g)

    def test_average_is_arithmetic_mean_for_function_costs(self, linear_layout):
        # State-dependent surrogate: Hessians differ per sample, so the mean
        # is checked against per-sample finite-difference expansions.
        quartic = FunctionCost(
            4, lambda x, u, t, T_: float((x @ x) ** 2 + u @ u)
        )
        gen = np.random.default_rng(6)
        r1 = random_trajectory(gen, 3, 4, 2)
        r2 = random_trajectory(gen, 3, 4, 2)
        both = expand_cost(quartic, [r1, r2])
        e1 = expand_cost(quartic, [r1])
        e2 = expand_cost(quartic, [r2])
        # The uu-block clamp is idempotent here (identity curvature in u).
        assert np.allclose(both.H, 0.5 * (e1.H + e2.H), rtol=1e-8)
        assert np.allclose(both.g, 0.5 * (e1.g + e2.g), rtol=1e-8)

    def test_gradient_matches_central_differences_at_probe_points(self, linear_layout):
        gen = np.random.default_rng(7)
        for cost in (
            pose_cost(linear_layout, np.array([0.3, 0.3])),
            weighted_goal_cost(
                pickup_env().layout,
                q_weight=1.0,
                control_weight=0.001,
                qpos_weight=50.0,
                qrot_weight=10.0,
                q_target=np.zeros(3),
                qpos_target=[0.12],
                qrot_target=[0.0],
            ),
        ):
            d_x = cost.d_x
            d_u = 2 if d_x == 4 else 3
            expansion = expand_cost(
                cost, [random_trajectory(gen, T, d_x, d_u)]
            )
            for _ in range(100 // T + 1):
                for t in range(T - 1):  # running steps
                    z = gen.standard_normal(d_x + d_u)
                    x, u = z[:d_x], z[d_x:]
                    grad = expansion.H[t] @ z + expansion.g[t]
                    h = 1e-5
                    for i in range(len(z)):
                        zp, zm = z.copy(), z.copy()
                        zp[i] += h
                        zm[i] -= h
                        fd = (
                            cost.evaluate(zp[:d_x], zp[d_x:], t, T)
                            - cost.evaluate(zm[:d_x], zm[d_x:], t, T)
                        ) / (2 * h)
                        assert grad[i] == pytest.approx(fd, rel=1e-4, abs=1e-6)

    def test_clamp_never_fires_on_running_steps_of_paper_costs(
        self, linear_layout, pickup_layout
    ):
        gen = np.random.default_rng(8)
        demo_states = gen.standard_normal((T + 1, 10))
        from trajrl.trajectory import Demonstration

        demo = Demonstration(
            Trajectory(demo_states, gen.standard_normal((T, 3))), "t", np.array([0.0])
        )
        cases = [
            (pose_cost(linear_layout, np.zeros(2)), 4, 2),
            (manipulation_cost(pickup_layout, np.zeros(3), [0.0], [0.0]), 10, 3),
            (imitation_cost(pickup_layout, demo, 0.12, T), 10, 3),
        ]
        for cost, d_x, d_u in cases:
            expansion = expand_cost(cost, [random_trajectory(gen, T, d_x, d_u)])
            assert not expansion.uu_clamped[: T - 1].any()

    def test_clamp_fires_at_final_step_without_control_term(self, linear_layout):
        cost = pose_cost(linear_layout, np.zeros(2))
        gen = np.random.default_rng(9)
        expansion = expand_cost(cost, [random_trajectory(gen, T, 4, 2)])
        assert expansion.uu_clamped[T - 1]

    def test_nan_reports_rollout_and_timestep(self, linear_layout):
        bad = FunctionCost(4, lambda x, u, t, T_: float("nan") if t == 2 else 0.0)
        gen = np.random.default_rng(10)
        with pytest.raises(ValueError, match="rollout 0, timestep 2"):
            expand_cost(bad, [random_trajectory(gen, T, 4, 2)])

    def test_empty_rollout_list_rejected(self, linear_layout):
        with pytest.raises(ValueError):
            expand_cost(pose_cost(linear_layout, np.zeros(2)), [])
