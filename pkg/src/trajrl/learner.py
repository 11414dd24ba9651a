"""Outer training loop: collect rollouts, fit local models, take a
KL-constrained controller step; plus demonstration bootstrapping and delayed
initial-state robustification.

Each iteration samples ``N`` rollouts of the current controller with fresh
smoothed exploration noise, fits time-varying linear-Gaussian dynamics with a
mixture prior pooled over the last two iterations, expands the task cost
around the samples, and solves the trust-region update. Everything is
deterministic given the master seed: every randomness consumer draws from its
own labeled stream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng
from .costs import expand_cost
from .dynamics import (
    NiwStrength,
    default_component_count,
    dynamics_tuples,
    fit_dynamics,
    fit_gmm,
)
from .errors import DivergenceError, TrainingAbortedError
from .lqg import (
    LinearGaussianController,
    expected_cost,
    forward_pass,
    init_controller,
    solve_kl_constrained,
)
from .trajectory import (
    Demonstration,
    Trajectory,
    generate_smoothed_noise,
    rollout,
    score_trajectory,
)

log = logging.getLogger(__name__)

Array = np.ndarray

_STREAM_X0 = "learner.x0"
_STREAM_ROLLOUT = "learner.rollout"
_STREAM_GMM = "learner.gmm"
_STREAM_BOOTSTRAP = "learner.bootstrap"


@dataclass(frozen=True)
class LearnerConfig:
    """Knobs of the outer loop; defaults match the shipped experiments."""

    iterations: int = 15
    rollouts_per_iteration: int = 5
    noise_sigma: float = 2.0
    epsilon_per_step: float = 1.0
    robustification_start: int = 10  # 1-based iteration at which x0 noise begins
    initial_state_noise: float = 0.0  # fraction of the per-dimension state range
    init_cov_scale: float = 1.0
    gmm_components: int | None = None  # None: one component per 40 pooled tuples
    gmm_max_iters: int = 50
    niw_strength: NiwStrength = field(default_factory=NiwStrength)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.rollouts_per_iteration < 1:
            raise ValueError("rollouts_per_iteration must be >= 1")
        if not 0.0 <= self.initial_state_noise <= 0.5:
            raise ValueError("initial_state_noise must be in [0, 0.5]")
        if self.epsilon_per_step <= 0:
            raise ValueError("epsilon_per_step must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass
class IterationRecord:
    iteration: int
    mean_cost: float
    model_cost: float
    model_cost_prev: float
    kl: float
    eta: float
    dual_iterations: int
    successes: tuple[bool, ...]
    stalled: bool


@dataclass
class LearningCurve:
    """Per-iteration training record; exported as CSV by the harness."""

    records: list[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def mean_costs(self) -> Array:
        return np.array([r.mean_cost for r in self.records])

    @property
    def model_costs(self) -> Array:
        return np.array([r.model_cost for r in self.records])

    @property
    def model_costs_prev(self) -> Array:
        return np.array([r.model_cost_prev for r in self.records])

    @property
    def kls(self) -> Array:
        return np.array([r.kl for r in self.records])

    def rows(self) -> list[tuple]:
        """CSV rows: iteration, mean_cost, model_cost, kl, eta, dual_iters, successes."""
        return [
            (
                r.iteration,
                r.mean_cost,
                r.model_cost,
                r.kl,
                r.eta,
                r.dual_iterations,
                int(sum(r.successes)),
            )
            for r in self.records
        ]


CURVE_CSV_HEADER = (
    "iteration",
    "mean_cost",
    "model_cost",
    "kl",
    "eta",
    "dual_iters",
    "successes",
)


def bootstrap_from_demo(
    env,
    demo: Demonstration,
    noise_scale: float,
    N: int,
    seed: int,
    noise_sigma: float = 2.0,
) -> tuple[list[Trajectory], LinearGaussianController]:
    """Collect rollouts by replaying the demonstration's controls with noise.

    Executes ``u_t = demo.u_t + noise_scale * eps_t`` open loop from the
    demonstration's initial state. Also returns the open-loop controller
    (zero gains, offsets equal to the demo controls, covariance
    ``noise_scale^2 I``) that generated the samples, which anchors the first
    KL-constrained update.
    """
    if demo.horizon != env.horizon:
        raise ValueError(
            f"demo horizon {demo.horizon} != env horizon {env.horizon}"
        )
    if noise_scale < 0:
        raise ValueError("noise_scale must be >= 0")
    T, d_u = env.horizon, env.d_u
    cov_scale = max(noise_scale, 1e-6) ** 2
    anchor = LinearGaussianController(
        K=np.zeros((T, d_u, env.d_x)),
        k=np.array(demo.actions),
        C=np.tile(cov_scale * np.eye(d_u), (T, 1, 1)),
    )
    # The anchor Cholesky factor is max(noise_scale, 1e-6); compensate so the
    # effective perturbation is exactly noise_scale * eps even at zero.
    compensation = noise_scale / max(noise_scale, 1e-6)
    rollouts = []
    for i in range(N):
        noise = generate_smoothed_noise(
            T, d_u, noise_sigma, rng.derive_seed(seed, _STREAM_BOOTSTRAP, i)
        )
        rollouts.append(rollout(env, anchor, demo.x0, noise.scaled(compensation)))
    return rollouts, anchor


def _sample_initial_states(env, config: LearnerConfig, iteration: int, N: int):
    noisy = (
        config.initial_state_noise > 0
        and iteration >= config.robustification_start
    )
    states = []
    for i in range(N):
        x0 = np.array(env.x0)
        if noisy:
            gen = rng.stream(config.seed, _STREAM_X0, iteration, i)
            span = config.initial_state_noise * env.state_range
            x0 = x0 + gen.uniform(-span, span)
        states.append(x0)
    return states


def train(
    env,
    cost,
    config: LearnerConfig,
    demo: Demonstration | None = None,
    demo_noise_scale: float = 0.05,
) -> tuple[LinearGaussianController, LearningCurve]:
    """Run the full training loop and return the controller and its curve.

    With ``demo`` given, iteration 1 replaces controller rollouts with
    noise-perturbed replays of the demonstration's control trajectory and the
    first constrained update is anchored at that open-loop distribution.
    Initial-state noise (when enabled) starts at
    ``config.robustification_start``; earlier iterations use the nominal
    initial state.
    """
    if config.rollouts_per_iteration < 2 and demo is None:
        raise ValueError("need at least 2 rollouts per iteration without a demo")
    T, d_x, d_u = env.horizon, env.d_x, env.d_u
    controller = init_controller(T, d_x, d_u, config.init_cov_scale)
    curve = LearningCurve()
    previous_rollouts: list[Trajectory] = []
    eta_warm = 1.0
    N = config.rollouts_per_iteration

    for iteration in range(1, config.iterations + 1):
        if iteration == 1 and demo is not None:
            rollouts, controller = bootstrap_from_demo(
                env,
                demo,
                demo_noise_scale,
                N,
                config.seed,
                noise_sigma=config.noise_sigma,
            )
            x0s = [np.array(demo.x0) for _ in range(N)]
        else:
            x0s = _sample_initial_states(env, config, iteration, N)
            rollouts = []
            for i, x0 in enumerate(x0s):
                noise = generate_smoothed_noise(
                    T,
                    d_u,
                    config.noise_sigma,
                    rng.derive_seed(config.seed, _STREAM_ROLLOUT, iteration, i),
                )
                try:
                    rollouts.append(rollout(env, controller, x0, noise))
                except DivergenceError as err:
                    log.warning(
                        "rollout %d diverged at iteration %d (timestep %d)",
                        i,
                        iteration,
                        err.timestep,
                    )
            if len(rollouts) < 2:
                raise TrainingAbortedError(
                    f"fewer than 2 usable rollouts at iteration {iteration}",
                    curve=curve,
                )

        scored = [score_trajectory(traj, cost) for traj in rollouts]
        mean_cost = float(np.mean([traj.total_cost for traj in scored]))
        successes = tuple(env.success(traj) for traj in scored)

        pooled = dynamics_tuples(previous_rollouts + rollouts)
        n_components = config.gmm_components or default_component_count(len(pooled))
        n_components = min(n_components, len(pooled))
        prior = fit_gmm(
            pooled,
            n_components,
            rng.derive_seed(config.seed, _STREAM_GMM, iteration),
            max_iters=config.gmm_max_iters,
        )
        dyn = fit_dynamics(rollouts, prior, config.niw_strength)

        expansion = expand_cost(cost, rollouts)
        x0_arr = np.stack(x0s)
        x1_mean = x0_arr.mean(axis=0)
        centered = x0_arr - x1_mean
        x1_cov = centered.T @ centered / len(x0s)

        new_controller, dual = solve_kl_constrained(
            dyn,
            expansion,
            controller,
            config.epsilon_per_step * T,
            x1_mean,
            x1_cov,
            eta_init=eta_warm,
        )
        if dual.stalled:
            log.warning("dual search stalled at iteration %d", iteration)
        else:
            eta_warm = dual.eta

        model_cost = expected_cost(
            forward_pass(dyn, new_controller, x1_mean, x1_cov), expansion
        )
        model_cost_prev = expected_cost(
            forward_pass(dyn, controller, x1_mean, x1_cov), expansion
        )
        curve.append(
            IterationRecord(
                iteration=iteration,
                mean_cost=mean_cost,
                model_cost=model_cost,
                model_cost_prev=model_cost_prev,
                kl=dual.kl,
                eta=dual.eta,
                dual_iterations=dual.iterations,
                successes=successes,
                stalled=dual.stalled,
            )
        )
        controller = new_controller
        previous_rollouts = rollouts

    return controller, curve
