"""Gaussian conditioning and dynamics fitting with the mixture prior."""

import numpy as np
import pytest

from trajrl.dynamics import (
    NiwStrength,
    condition_gaussian,
    dynamics_tuples,
    fit_dynamics,
    fit_gmm,
)
from trajrl.trajectory import Trajectory


class TestConditionGaussian:
    def test_block_diagonal_gives_zero_coefficients(self):
        cov = np.diag([1.0, 2.0, 3.0, 4.0])
        mean = np.array([1.0, 2.0, 3.0, 4.0])
        res = condition_gaussian(mean, cov, in_dim=2)
        assert np.allclose(res.coeffs, 0.0)
        assert np.allclose(res.offset, [3.0, 4.0])
        assert not res.ridge_used

    def test_linear_map_recovered_from_joint_moments(self):
        # Joint moments built analytically from y = A x + noise.
        gen = np.random.default_rng(0)
        A = gen.standard_normal((2, 3))
        S_xx = np.eye(3) + 0.2 * np.ones((3, 3))
        noise = 1e-9 * np.eye(2)
        cov = np.block([[S_xx, S_xx @ A.T], [A @ S_xx, A @ S_xx @ A.T + noise]])
        mu_x = np.array([0.5, -0.5, 1.0])
        mean = np.concatenate([mu_x, A @ mu_x])
        res = condition_gaussian(mean, cov, in_dim=3)
        assert np.allclose(res.coeffs, A, atol=1e-6)
        assert np.allclose(res.offset, 0.0, atol=1e-6)

    def test_residual_symmetric_psd(self):
        gen = np.random.default_rng(1)
        for _ in range(25):
            L = gen.standard_normal((5, 5))
            cov = L @ L.T + 1e-6 * np.eye(5)
            res = condition_gaussian(gen.standard_normal(5), cov, in_dim=2)
            assert np.allclose(res.residual_cov, res.residual_cov.T)
            assert np.linalg.eigvalsh(res.residual_cov).min() >= -1e-10

    def test_singular_input_block_flags_ridge(self):
        cov = np.zeros((3, 3))
        cov[2, 2] = 1.0  # input block is exactly singular
        res = condition_gaussian(np.zeros(3), cov, in_dim=2)
        assert res.ridge_used

    def test_bad_in_dim_rejected(self):
        with pytest.raises(ValueError):
            condition_gaussian(np.zeros(3), np.eye(3), in_dim=3)


def simulate_linear_system(A, B, c, T, n_rollouts, seed, process_noise=0.0):
    gen = np.random.default_rng(seed)
    d_x, d_u = B.shape
    rollouts = []
    for _ in range(n_rollouts):
        x = gen.standard_normal(d_x)
        states, actions = [x], []
        for _ in range(T):
            u = gen.standard_normal(d_u)
            x = A @ x + B @ u + c
            if process_noise:
                x = x + process_noise * gen.standard_normal(d_x)
            actions.append(u)
            states.append(x)
        rollouts.append(Trajectory(np.array(states), np.array(actions)))
    return rollouts


class TestFitDynamics:
    def test_exact_recovery_of_deterministic_linear_system(self):
        gen = np.random.default_rng(2)
        d_x, d_u = 4, 2
        A = 0.9 * np.eye(d_x) + 0.05 * gen.standard_normal((d_x, d_x))
        B = gen.standard_normal((d_x, d_u))
        c = gen.standard_normal(d_x)
        rollouts = simulate_linear_system(A, B, c, T=6, n_rollouts=30, seed=3)
        # Vanishing prior strength: pure linear regression on the samples.
        prior = fit_gmm(dynamics_tuples(rollouts), K=2, seed=0)
        dyn = fit_dynamics(rollouts, prior, NiwStrength(1e-12, 1e-12))
        for t in range(6):
            assert np.allclose(dyn.f_x[t], A, atol=1e-6)
            assert np.allclose(dyn.f_u[t], B, atol=1e-6)
            assert np.allclose(dyn.f_c[t], c, atol=1e-6)
            assert np.all(np.abs(dyn.F[t]) < 1e-10)

    def test_infinite_prior_strength_returns_prior_conditional(self):
        gen = np.random.default_rng(4)
        rollouts = simulate_linear_system(
            0.8 * np.eye(3), gen.standard_normal((3, 2)), np.zeros(3), 5, 10, seed=5
        )
        tuples = dynamics_tuples(rollouts)
        prior = fit_gmm(tuples, K=1, seed=0)
        dyn = fit_dynamics(rollouts, prior, NiwStrength(1e12, 1e12))
        # With one component the prior conditional is the global regression.
        from trajrl.dynamics import condition_gaussian

        expected = condition_gaussian(prior.means[0], prior.covariances[0], 5)
        for t in range(5):
            assert np.allclose(dyn.f_x[t], expected.coeffs[:, :3], atol=1e-6)
            assert np.allclose(dyn.f_c[t], expected.offset, atol=1e-6)

    def test_prior_carries_few_samples_in_high_dimension(self):
        # 5 rollouts in a 10-dimensional state space: finite predictions on
        # held-out rollouts require the mixture prior.
        gen = np.random.default_rng(6)
        d_x, d_u = 10, 3
        A = 0.95 * np.eye(d_x) + 0.02 * gen.standard_normal((d_x, d_x))
        B = gen.standard_normal((d_x, d_u))
        c = 0.1 * gen.standard_normal(d_x)
        rollouts = simulate_linear_system(A, B, c, T=8, n_rollouts=5, seed=7)
        held_out = simulate_linear_system(A, B, c, T=8, n_rollouts=3, seed=8)
        prior = fit_gmm(dynamics_tuples(rollouts), K=2, seed=0)
        dyn = fit_dynamics(rollouts, prior, NiwStrength(1.0, 1.0))
        for traj in held_out:
            for t in range(traj.horizon):
                pred = dyn.predict_mean(traj.states[t], traj.actions[t], t)
                assert np.all(np.isfinite(pred))

    def test_permutation_invariance(self):
        gen = np.random.default_rng(9)
        rollouts = simulate_linear_system(
            0.9 * np.eye(3), gen.standard_normal((3, 2)), np.zeros(3), 5, 6, seed=10
        )
        prior = fit_gmm(dynamics_tuples(rollouts), K=2, seed=0)
        a = fit_dynamics(rollouts, prior, NiwStrength())
        b = fit_dynamics(rollouts[::-1], prior, NiwStrength())
        assert np.allclose(a.f_x, b.f_x, atol=1e-12)
        assert np.allclose(a.F, b.F, atol=1e-12)

    def test_error_decreases_with_more_rollouts(self):
        # In expectation over 20 seeds, more rollouts shrink the Frobenius
        # error of the state Jacobian on a noisy linear system.
        gen = np.random.default_rng(11)
        d_x, d_u = 4, 2
        A = 0.9 * np.eye(d_x) + 0.05 * gen.standard_normal((d_x, d_x))
        B = gen.standard_normal((d_x, d_u))

        def mean_error(n_rollouts):
            errs = []
            for seed in range(20):
                rollouts = simulate_linear_system(
                    A, B, np.zeros(d_x), 4, n_rollouts, seed=seed, process_noise=0.05
                )
                dyn = fit_dynamics(rollouts, None, NiwStrength())
                errs.append(
                    np.mean([np.linalg.norm(dyn.f_x[t] - A) for t in range(4)])
                )
            return float(np.mean(errs))

        assert mean_error(60) < mean_error(15)

    def test_single_rollout_without_prior_rejected(self):
        gen = np.random.default_rng(12)
        rollouts = simulate_linear_system(
            np.eye(2), gen.standard_normal((2, 1)), np.zeros(2), 4, 1, seed=0
        )
        with pytest.raises(ValueError):
            fit_dynamics(rollouts, None)

    def test_horizon_mismatch_rejected(self):
        gen = np.random.default_rng(13)
        r1 = simulate_linear_system(np.eye(2), np.ones((2, 1)), np.zeros(2), 4, 1, 0)
        r2 = simulate_linear_system(np.eye(2), np.ones((2, 1)), np.zeros(2), 5, 1, 1)
        with pytest.raises(ValueError):
            fit_dynamics(r1 + r2, None)

    def test_covariances_symmetric_psd(self):
        gen = np.random.default_rng(14)
        rollouts = simulate_linear_system(
            0.9 * np.eye(3),
            gen.standard_normal((3, 2)),
            np.zeros(3),
            6,
            5,
            seed=15,
            process_noise=0.1,
        )
        prior = fit_gmm(dynamics_tuples(rollouts), K=2, seed=0)
        dyn = fit_dynamics(rollouts, prior, NiwStrength())
        for t in range(6):
            assert np.allclose(dyn.F[t], dyn.F[t].T)
            assert np.linalg.eigvalsh(dyn.F[t]).min() >= 0.0
