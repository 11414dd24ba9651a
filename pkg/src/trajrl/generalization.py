"""Generalizing local controllers: nearest-neighbor libraries, observation
projections for partial sensing, behavior-cloning data, and MLP distillation.

The distilled policy is a plain feedforward ReLU network trained by
minibatch SGD with momentum on mean-squared action error, with inputs
standardized to the dataset statistics. Training is implemented directly on
numpy arrays so results are deterministic given the seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import DivergenceError
from .lqg import LinearGaussianController
from .trajectory import _frozen_array, generate_smoothed_noise, rollout

log = logging.getLogger(__name__)

Array = np.ndarray

OBSERVATION_MODES = ("full", "partial_touch", "proprioceptive")

_STREAM_CLONE = "generalization.clone"
_STREAM_MLP = "generalization.mlp"
_STREAM_SWEEP = "generalization.sweep"


@dataclass(frozen=True)
class LibraryEntry:
    key: Array  # condition key, e.g. the initial object angle
    x0: Array  # initial state the controller was trained from
    controller: LinearGaussianController

    def __post_init__(self):
        object.__setattr__(self, "key", _frozen_array(self.key))
        object.__setattr__(self, "x0", _frozen_array(self.x0))


@dataclass(frozen=True)
class LocalPolicyLibrary:
    """Local controllers indexed by a condition key.

    ``key_indices`` names the state components the key is read from, so a
    query key can be extracted from any initial state.
    """

    entries: tuple[LibraryEntry, ...]
    key_indices: tuple[int, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("library must contain at least one entry")
        key_dim = len(self.key_indices)
        horizons = set()
        seen = set()
        for entry in self.entries:
            if entry.key.shape != (key_dim,):
                raise ValueError("entry key dimension does not match key_indices")
            horizons.add(entry.controller.horizon)
            fingerprint = tuple(entry.key.tolist())
            if fingerprint in seen:
                raise ValueError(f"duplicate library key {fingerprint}")
            seen.add(fingerprint)
        if len(horizons) != 1:
            raise ValueError("all library controllers must share one horizon")

    def __len__(self) -> int:
        return len(self.entries)

    def key_from_state(self, x: Array) -> Array:
        return np.asarray(x, dtype=float)[list(self.key_indices)]


def nearest_neighbor_select(lib: LocalPolicyLibrary, query: Array) -> LinearGaussianController:
    """Entry with minimum Euclidean key distance; ties go to the lowest index."""
    return lib.entries[nearest_neighbor_index(lib, query)].controller


def nearest_neighbor_index(lib: LocalPolicyLibrary, query: Array) -> int:
    query = np.asarray(query, dtype=float)
    if query.shape != (len(lib.key_indices),):
        raise ValueError(
            f"query has dimension {query.shape}, expected ({len(lib.key_indices)},)"
        )
    best_index = 0
    best_dist = np.inf
    for i, entry in enumerate(lib.entries):
        dist = float(np.sum((entry.key - query) ** 2))
        if dist < best_dist:
            best_index, best_dist = i, dist
    return best_index


@dataclass(frozen=True)
class ObservationSpec:
    """Which state components a policy may see, plus optional touch bits."""

    mode: str
    state_indices: tuple[int, ...]
    include_touch: bool

    @property
    def dim_touch(self) -> int:
        return 0


def observation_spec(env, mode: str) -> ObservationSpec:
    """Build the index mask for an observation mode on an environment.

    ``full`` passes the state through unchanged. ``partial_touch`` removes
    the object pose and velocity ranges and appends the environment's binary
    touch features; ``proprioceptive`` removes the same ranges and appends
    nothing.
    """
    if mode not in OBSERVATION_MODES:
        raise ValueError(f"unknown observation mode {mode!r}")
    if mode == "full":
        return ObservationSpec(mode, tuple(range(env.d_x)), False)
    object_ranges = [
        name for name in ("qpos", "qrot", "qposdot", "qrotdot") if env.layout.has(name)
    ]
    if not object_ranges:
        raise ValueError(
            f"environment {env.name!r} has no object ranges; partial modes undefined"
        )
    excluded: set[int] = set()
    for name in object_ranges:
        start, stop = env.layout.range_of(name)
        excluded.update(range(start, stop))
    kept = tuple(i for i in range(env.d_x) if i not in excluded)
    include_touch = mode == "partial_touch"
    if include_touch and env.touch_fn is None:
        raise ValueError(f"environment {env.name!r} provides no touch features")
    return ObservationSpec(mode, kept, include_touch)


def observe(x: Array, env, spec: ObservationSpec) -> Array:
    """Project a full state onto the observation a policy is allowed to see."""
    x = np.asarray(x, dtype=float)
    if x.shape != (env.d_x,):
        raise ValueError(f"state has dimension {x.shape}, expected ({env.d_x},)")
    if spec.mode == "full":
        return x.copy()
    base = x[list(spec.state_indices)]
    if spec.include_touch:
        return np.concatenate([base, env.touch(x)])
    return base


def observation_dim(env, spec: ObservationSpec) -> int:
    return len(spec.state_indices) + (env.n_touch if spec.include_touch else 0)


@dataclass(frozen=True)
class CloningDataset:
    """Observation/action pairs sampled from local policies."""

    observations: Array  # (M, d_o)
    actions: Array  # (M, d_u)
    policy_index: Array  # (M,) source library entry
    timestep: Array  # (M,)

    def __post_init__(self):
        object.__setattr__(self, "observations", _frozen_array(self.observations))
        object.__setattr__(self, "actions", _frozen_array(self.actions))
        object.__setattr__(self, "policy_index", _frozen_array(self.policy_index, int))
        object.__setattr__(self, "timestep", _frozen_array(self.timestep, int))

    def __len__(self) -> int:
        return self.observations.shape[0]


def generate_cloning_data(
    lib: LocalPolicyLibrary,
    env,
    spec: ObservationSpec,
    samples_per_policy: int,
    noise_scale: float,
    seed: int,
    noise_sigma: float = 2.0,
) -> CloningDataset:
    """Roll out every library controller from its own initial state.

    Each sample executes the controller with smoothed exploration noise
    scaled by ``noise_scale`` and records ``(observe(x_t), u_t)`` for every
    step. Diverged rollouts are skipped and logged; more than 10% skipped is
    an error.
    """
    if samples_per_policy < 1:
        raise ValueError("samples_per_policy must be >= 1")
    obs_rows, act_rows, pol_rows, t_rows = [], [], [], []
    skipped = 0
    total = len(lib) * samples_per_policy
    for i, entry in enumerate(lib.entries):
        T = entry.controller.horizon
        for s in range(samples_per_policy):
            noise = generate_smoothed_noise(
                T,
                entry.controller.d_u,
                noise_sigma,
                rng.derive_seed(seed, _STREAM_CLONE, i, s),
            ).scaled(noise_scale)
            try:
                traj = rollout(env, entry.controller, entry.x0, noise)
            except DivergenceError as err:
                skipped += 1
                log.warning(
                    "cloning rollout diverged (entry %d sample %d timestep %d)",
                    i,
                    s,
                    err.timestep,
                )
                continue
            for t in range(T):
                obs_rows.append(observe(traj.states[t], env, spec))
                act_rows.append(traj.actions[t])
                pol_rows.append(i)
                t_rows.append(t)
    if skipped > 0.1 * total:
        raise RuntimeError(
            f"{skipped}/{total} cloning rollouts diverged; giving up"
        )
    return CloningDataset(
        observations=np.asarray(obs_rows),
        actions=np.asarray(act_rows),
        policy_index=np.asarray(pol_rows),
        timestep=np.asarray(t_rows),
    )


@dataclass(frozen=True)
class MlpPolicy:
    """Feedforward ReLU network acting on standardized observations."""

    weights: tuple[Array, ...]
    biases: tuple[Array, ...]
    input_mean: Array
    input_std: Array
    epochs: int
    final_loss: float
    seed: int
    loss_history: Array = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(_frozen_array(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen_array(b) for b in self.biases))
        object.__setattr__(self, "input_mean", _frozen_array(self.input_mean))
        object.__setattr__(self, "input_std", _frozen_array(self.input_std))
        object.__setattr__(self, "loss_history", _frozen_array(self.loss_history))
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("policy weights must be finite")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def hidden_layers(self) -> int:
        return len(self.weights) - 1


def _init_params(dims: list[int], gen: np.random.Generator):
    """Fan-in scaled Gaussian init: He for ReLU layers, unit-variance output."""
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        scale = np.sqrt((1.0 if last else 2.0) / fan_in)
        weights.append(gen.standard_normal((fan_in, fan_out)) * scale)
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward(weights, biases, X: Array):
    """Forward pass; returns output and pre-activations of hidden layers."""
    activations = [X]
    h = X
    for w, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
        activations.append(h)
    out = h @ weights[-1] + biases[-1]
    return out, activations


def mlp_loss_and_grads(weights, biases, X: Array, Y: Array):
    """Mean-squared-error loss and its gradients by backpropagation."""
    out, activations = _forward(weights, biases, X)
    diff = out - Y
    loss = float(np.mean(diff**2))
    n = X.shape[0] * Y.shape[1]
    delta = 2.0 * diff / n
    grads_w = [None] * len(weights)
    grads_b = [None] * len(biases)
    for layer in reversed(range(len(weights))):
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * (activations[layer] > 0.0)
    return loss, grads_w, grads_b


def train_mlp(
    data: CloningDataset,
    hidden_layers: int,
    width: int,
    epochs: int,
    batch: int,
    lr: float,
    seed: int,
    momentum: float = 0.9,
    precision: str = "float32",
) -> MlpPolicy:
    """Behavior-clone the dataset into an MLP by SGD with momentum.

    Inputs are standardized with the dataset statistics (stored in the policy
    for inference). Training arithmetic runs in ``precision`` (single by
    default, purely for speed); the returned parameters are float64.
    Deterministic given ``seed``; reports the full-dataset loss after every
    epoch.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if min(hidden_layers, width, batch) < 1 or lr <= 0 or epochs < 0:
        raise ValueError("hyperparameters must be positive (epochs may be 0)")
    dtype = np.dtype(precision)
    X_raw = np.array(data.observations)
    Y = np.array(data.actions, dtype=dtype)
    mean = X_raw.mean(axis=0)
    std = np.maximum(X_raw.std(axis=0), 1e-8)
    X = ((X_raw - mean) / std).astype(dtype)

    dims = [X.shape[1]] + [width] * hidden_layers + [Y.shape[1]]
    gen = rng.stream(seed, _STREAM_MLP)
    weights, biases = _init_params(dims, gen)
    weights = [w.astype(dtype) for w in weights]
    biases = [b.astype(dtype) for b in biases]
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]

    history = []
    loss = mlp_loss_and_grads(weights, biases, X, Y)[0]
    history.append(loss)
    for epoch in range(epochs):
        order = gen.permutation(len(X))
        for start in range(0, len(X), batch):
            idx = order[start : start + batch]
            loss_b, grads_w, grads_b = mlp_loss_and_grads(
                weights, biases, X[idx], Y[idx]
            )
            if not np.isfinite(loss_b):
                raise RuntimeError(
                    f"training loss became non-finite at epoch {epoch}; "
                    f"lower the learning rate (lr={lr})"
                )
            for layer in range(len(weights)):
                vel_w[layer] = momentum * vel_w[layer] - lr * grads_w[layer]
                vel_b[layer] = momentum * vel_b[layer] - lr * grads_b[layer]
                weights[layer] = weights[layer] + vel_w[layer]
                biases[layer] = biases[layer] + vel_b[layer]
        history.append(mlp_loss_and_grads(weights, biases, X, Y)[0])

    return MlpPolicy(
        weights=tuple(w.astype(float) for w in weights),
        biases=tuple(b.astype(float) for b in biases),
        input_mean=mean,
        input_std=std,
        epochs=epochs,
        final_loss=history[-1],
        seed=seed,
        loss_history=np.asarray(history),
    )


def mlp_act(policy: MlpPolicy, obs: Array) -> Array:
    """Standardize, forward, identity output; time-invariant by construction."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (policy.input_dim,):
        raise ValueError(
            f"observation has dimension {obs.shape}, expected ({policy.input_dim},)"
        )
    z = (obs - policy.input_mean) / policy.input_std
    out, _ = _forward(policy.weights, policy.biases, z[None, :])
    return out[0]


# ---------------------------------------------------------------------------
# Policy sources for evaluation sweeps


class SingleControllerSource:
    """Evaluates one local controller's mean law everywhere."""

    name = "controller"

    def __init__(self, controller: LinearGaussianController):
        self.controller = controller

    def begin(self, env, x0: Array):
        ctrl = self.controller
        return x0, lambda x, t: ctrl.mean_action(x, t)


class LibraryNearestNeighborSource:
    """Selects the nearest local controller once, from the initial key."""

    name = "library-nn"

    def __init__(self, lib: LocalPolicyLibrary, reset_to_nearest: bool = False):
        self.lib = lib
        self.reset_to_nearest = reset_to_nearest

    def begin(self, env, x0: Array):
        query = self.lib.key_from_state(x0)
        entry = self.lib.entries[nearest_neighbor_index(self.lib, query)]
        if self.reset_to_nearest:
            # Compatibility reset: non-key dimensions snap to the selected
            # entry's training state while the queried condition is kept.
            x0 = np.array(entry.x0)
            x0[list(self.lib.key_indices)] = query
        ctrl = entry.controller
        return x0, lambda x, t: ctrl.mean_action(x, t)


class MlpSource:
    """Evaluates a distilled network on its observation projection each step."""

    name = "mlp"

    def __init__(self, policy: MlpPolicy, spec: ObservationSpec):
        self.policy = policy
        self.spec = spec

    def begin(self, env, x0: Array):
        return x0, lambda x, t: mlp_act(self.policy, observe(x, env, self.spec))


@dataclass(frozen=True)
class SweepResult:
    """Per-trial outcomes of an evaluation sweep."""

    conditions: Array  # (n_conditions, key_dim)
    condition_index: Array  # (n_trials,)
    condition_value: Array  # (n_trials, key_dim) actual sampled condition
    success: Array  # (n_trials,) bool
    cost: Array  # (n_trials,)

    @property
    def overall_success_rate(self) -> float:
        return float(np.mean(self.success))

    def per_condition_success(self) -> Array:
        n = self.conditions.shape[0]
        return np.array(
            [float(np.mean(self.success[self.condition_index == i])) for i in range(n)]
        )


def evaluate_sweep(
    source,
    env,
    conditions,
    trials_per_condition: int,
    noise: float,
    seed: int,
    condition_indices: tuple[int, ...],
    condition_halfwidth: float = 0.0,
    cost=None,
) -> SweepResult:
    """Success-rate sweep of a policy source over initial-condition bins.

    Each trial perturbs the nominal initial state: the condition dimensions
    are set to the bin center plus a uniform draw within
    ``condition_halfwidth``, and the remaining dimensions receive uniform
    noise of ``noise`` times the state range. Deterministic given ``seed``.
    """
    conditions = np.atleast_2d(np.asarray(conditions, dtype=float))
    if conditions.shape[1] != len(condition_indices):
        raise ValueError("condition dimension does not match condition_indices")
    cond_idx_list = list(condition_indices)
    n_cond = conditions.shape[0]
    rows_index, rows_value, rows_success, rows_cost = [], [], [], []
    for ci in range(n_cond):
        for trial in range(trials_per_condition):
            gen = rng.stream(seed, _STREAM_SWEEP, ci, trial)
            value = conditions[ci] + gen.uniform(
                -condition_halfwidth, condition_halfwidth, size=conditions.shape[1]
            )
            x0 = np.array(env.x0)
            if noise > 0:
                span = noise * env.state_range
                x0 = x0 + gen.uniform(-span, span)
            x0[cond_idx_list] = value
            x0_used, act = source.begin(env, x0)
            traj = _run_policy(env, x0_used, act)
            rows_index.append(ci)
            rows_value.append(value)
            rows_success.append(env.success(traj) if traj is not None else False)
            if cost is not None and traj is not None:
                from .trajectory import trajectory_total_cost

                rows_cost.append(trajectory_total_cost(traj, cost))
            else:
                rows_cost.append(np.nan)
    return SweepResult(
        conditions=conditions,
        condition_index=np.asarray(rows_index),
        condition_value=np.asarray(rows_value),
        success=np.asarray(rows_success, dtype=bool),
        cost=np.asarray(rows_cost),
    )


def _run_policy(env, x0: Array, act):
    """Deterministic closed-loop execution of an arbitrary step policy."""
    from .trajectory import Trajectory

    x = np.asarray(x0, dtype=float)
    states = np.empty((env.horizon + 1, env.d_x))
    actions = np.empty((env.horizon, env.d_u))
    states[0] = x
    for t in range(env.horizon):
        u = act(x, t)
        actions[t] = u
        x = env.step(x, u)
        if not np.all(np.isfinite(x)):
            return None
        states[t + 1] = x
    return Trajectory(states, actions)
