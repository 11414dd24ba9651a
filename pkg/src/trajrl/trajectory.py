"""Trajectory containers, smoothed exploration noise, and rollout execution.

Conventions used throughout the package: a horizon-``T`` trajectory holds
``T + 1`` states (the initial state plus one per executed action) and ``T``
actions. Timesteps are 0-based in code; the cost of the last step
(``t == T - 1``) uses the cost function's final-step variant.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ControllerInvalidError, DivergenceError

Array = np.ndarray


def _frozen_array(values, dtype=float) -> Array:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class NoiseMatrix:
    """Pre-generated exploration noise, one row per timestep.

    Columns are unit-variance Gaussian streams. With ``sigma > 0`` they are
    temporally correlated by a Gaussian kernel but renormalized back to unit
    variance, so the controller covariance alone sets the exploration
    magnitude.
    """

    values: Array
    sigma: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values))

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def d_u(self) -> int:
        return self.values.shape[1]

    def scaled(self, factor: float) -> "NoiseMatrix":
        return NoiseMatrix(self.values * float(factor), self.sigma, self.seed)


def smoothing_kernel(sigma: float) -> Array:
    """Normalized Gaussian kernel of std ``sigma`` steps, truncated at 4 sigma."""
    radius = int(4.0 * sigma + 0.5)
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    return kernel / kernel.sum()


def generate_smoothed_noise(T: int, d_u: int, sigma: float, seed: int) -> NoiseMatrix:
    """Draw white Gaussian noise and smooth each column over time.

    The smoothing kernel is a Gaussian of standard deviation ``sigma``
    timesteps, truncated at four standard deviations and applied with
    reflected boundaries. Each column is rescaled so the theoretical variance
    of the smoothed stream is 1. ``sigma = 0`` returns the raw draws.
    Deterministic given ``(T, d_u, sigma, seed)``.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if d_u < 1:
        raise ValueError(f"d_u must be >= 1, got {d_u}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((T, d_u))
    if sigma == 0:
        return NoiseMatrix(white, 0.0, seed)
    kernel = smoothing_kernel(sigma)
    radius = (len(kernel) - 1) // 2
    if radius == 0:
        return NoiseMatrix(white, float(sigma), seed)
    # Unit theoretical variance: white noise through weights w has variance
    # sum(w^2); boundary reflection keeps edge variance from drooping.
    gain = 1.0 / np.sqrt(np.sum(kernel**2))
    padded = np.pad(white, ((radius, radius), (0, 0)), mode="reflect")
    smoothed = np.empty_like(white)
    for j in range(d_u):
        smoothed[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    return NoiseMatrix(smoothed * gain, float(sigma), seed)


@dataclass(frozen=True)
class Trajectory:
    """States ``x_0 .. x_T``, actions ``u_0 .. u_{T-1}``, optional step costs."""

    states: Array
    actions: Array
    step_costs: Array | None = None

    def __post_init__(self):
        states = _frozen_array(self.states)
        actions = _frozen_array(self.actions)
        if states.ndim != 2 or actions.ndim != 2:
            raise ValueError("states and actions must be 2-D arrays")
        if states.shape[0] != actions.shape[0] + 1:
            raise ValueError(
                f"expected one more state than actions, got {states.shape[0]} "
                f"states for {actions.shape[0]} actions"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        if self.step_costs is not None:
            costs = _frozen_array(self.step_costs)
            if costs.shape != (actions.shape[0],):
                raise ValueError("step_costs must have one entry per action")
            object.__setattr__(self, "step_costs", costs)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    @property
    def d_x(self) -> int:
        return self.states.shape[1]

    @property
    def d_u(self) -> int:
        return self.actions.shape[1]

    @property
    def total_cost(self) -> float:
        if self.step_costs is None:
            raise ValueError("step costs have not been evaluated")
        return float(np.sum(self.step_costs))

    def with_costs(self, step_costs) -> "Trajectory":
        return replace(self, step_costs=np.asarray(step_costs, dtype=float))


@dataclass(frozen=True)
class Demonstration:
    """A successful expert trajectory plus the condition it was recorded at."""

    trajectory: Trajectory
    source: str
    condition: Array

    def __post_init__(self):
        object.__setattr__(self, "condition", _frozen_array(self.condition))

    @property
    def horizon(self) -> int:
        return self.trajectory.horizon

    @property
    def x0(self) -> Array:
        return self.trajectory.states[0]

    @property
    def actions(self) -> Array:
        return self.trajectory.actions


def rollout(env, controller, x0: Array, noise: NoiseMatrix) -> Trajectory:
    """Execute a linear-Gaussian controller against an environment.

    At each step ``u_t = K_t x_t + k_t + L_t eps_t`` where ``L_t`` is the
    lower Cholesky factor of ``C_t`` and ``eps_t`` is row ``t`` of ``noise``.
    The recorded action is the commanded one; the environment applies its own
    control clamps inside ``step``. Purely functional: identical arguments
    produce identical trajectories.
    """
    T = controller.horizon
    if T != env.horizon:
        raise ValueError(f"controller horizon {T} != env horizon {env.horizon}")
    if noise.values.shape != (T, controller.d_u):
        raise ValueError(
            f"noise shape {noise.values.shape} does not match ({T}, {controller.d_u})"
        )
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (env.d_x,):
        raise ValueError(f"x0 has dimension {x0.shape}, expected ({env.d_x},)")
    try:
        chol = np.linalg.cholesky(controller.C)
    except np.linalg.LinAlgError:
        raise ControllerInvalidError(_first_bad_covariance(controller.C)) from None

    states = np.empty((T + 1, env.d_x))
    actions = np.empty((T, controller.d_u))
    states[0] = x0
    x = x0
    for t in range(T):
        u = controller.K[t] @ x + controller.k[t] + chol[t] @ noise.values[t]
        actions[t] = u
        x = env.step(x, u)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(t)
        states[t + 1] = x
    return Trajectory(states, actions)


def _first_bad_covariance(C: Array) -> int:
    for t in range(C.shape[0]):
        try:
            np.linalg.cholesky(C[t])
        except np.linalg.LinAlgError:
            return t
    return 0


def score_trajectory(traj: Trajectory, cost) -> Trajectory:
    """Return a copy of ``traj`` with per-step costs evaluated under ``cost``."""
    T = traj.horizon
    costs = np.empty(T)
    for t in range(T):
        costs[t] = cost.evaluate(traj.states[t], traj.actions[t], t, T)
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost evaluation produced non-finite values")
    return traj.with_costs(costs)


def trajectory_total_cost(traj: Trajectory, cost) -> float:
    """Total cost of a trajectory; the last step uses the final-step variant."""
    return score_trajectory(traj, cost).total_cost
