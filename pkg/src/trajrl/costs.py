"""Task cost functions and their local quadratic expansions.

All built-in task costs are sums of weighted squared distances on named
index ranges of the state plus a squared control penalty, so their
quadratic expansions are exact. Arbitrary callables are supported through
a central finite-difference path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .trajectory import Trajectory, _frozen_array

Array = np.ndarray

# Minimum eigenvalue enforced on the action-action block of every expansion;
# keeps the downstream Q_uu invertible.
UU_EIGENVALUE_FLOOR = 1e-6

_FD_STEP = 1e-5


@dataclass(frozen=True)
class StatePenalty:
    """``weight * ||x[start:stop] - target||^2``; target may vary with t."""

    weight: float
    start: int
    stop: int
    target: Array  # (dim,) fixed or (T, dim) per-timestep

    def __post_init__(self):
        object.__setattr__(self, "target", _frozen_array(self.target))
        if self.target.ndim not in (1, 2):
            raise ValueError("target must be a vector or a (T, dim) array")
        if self.target.shape[-1] != self.stop - self.start:
            raise ValueError("target dimension does not match the index range")

    def target_at(self, t: int) -> Array:
        return self.target if self.target.ndim == 1 else self.target[t]


@dataclass(frozen=True)
class QuadraticGoalCost:
    """Cost that declares its exact quadratic structure.

    ``running_*`` applies for ``t < T - 1``; the final step uses the
    ``final_*`` terms (with no control term unless ``final_control_weight``
    is set).
    """

    d_x: int
    running_terms: tuple[StatePenalty, ...]
    running_control_weight: float
    final_terms: tuple[StatePenalty, ...]
    final_control_weight: float
    kind: str = "quadratic"

    def _parts(self, t: int, T: int):
        if t == T - 1:
            return self.final_terms, self.final_control_weight
        return self.running_terms, self.running_control_weight

    def evaluate(self, x: Array, u: Array, t: int, T: int) -> float:
        terms, w_u = self._parts(t, T)
        total = w_u * float(u @ u)
        for term in terms:
            diff = x[term.start : term.stop] - term.target_at(t)
            total += term.weight * float(diff @ diff)
        return total

    def quadratic_coefficients(self, t: int, T: int, d_u: int):
        """Exact ``(H, g, c)`` of the cost as a quadratic in ``z = [x; u]``."""
        terms, w_u = self._parts(t, T)
        n = self.d_x + d_u
        H = np.zeros((n, n))
        g = np.zeros(n)
        c = 0.0
        for term in terms:
            sl = slice(term.start, term.stop)
            target = term.target_at(t)
            H[sl, sl] += 2.0 * term.weight * np.eye(term.stop - term.start)
            g[sl] += -2.0 * term.weight * target
            c += term.weight * float(target @ target)
        iu = slice(self.d_x, n)
        H[iu, iu] += 2.0 * w_u * np.eye(d_u)
        return H, g, c


@dataclass(frozen=True)
class FunctionCost:
    """Arbitrary cost callable ``(x, u, t, T) -> float``; expanded numerically."""

    d_x: int
    fn: Callable[[Array, Array, int, int], float]
    kind: str = "function"

    def evaluate(self, x: Array, u: Array, t: int, T: int) -> float:
        return float(self.fn(x, u, t, T))

    def quadratic_coefficients(self, t: int, T: int, d_u: int):
        return None


def pose_cost(layout, q_target) -> QuadraticGoalCost:
    """Reach a joint-space pose.

    Running cost ``||q - q*||^2 + 0.001 ||u||^2``; the final step keeps only
    the pose term, upweighted to ``10 ||q - q*||^2``.
    """
    start, stop = layout.range_of("q")
    q_target = np.asarray(q_target, dtype=float)
    if q_target.shape != (stop - start,):
        raise ValueError(
            f"q_target has dimension {q_target.shape}, expected ({stop - start},)"
        )
    return QuadraticGoalCost(
        d_x=layout.d_x,
        running_terms=(StatePenalty(1.0, start, stop, q_target),),
        running_control_weight=0.001,
        final_terms=(StatePenalty(10.0, start, stop, q_target),),
        final_control_weight=0.0,
        kind="pose",
    )


def manipulation_cost(layout, q_target, qpos_target, qrot_target) -> QuadraticGoalCost:
    """Reposition and reorient a free object while holding a hand pose.

    Running cost ``0.01||q - q*||^2 + 0.001||u||^2 + ||qpos - qpos*||^2 +
    10||qrot - qrot*||^2``; the final step doubles the state terms and drops
    the control term.
    """
    return weighted_goal_cost(
        layout,
        q_weight=0.01,
        control_weight=0.001,
        qpos_weight=1.0,
        qrot_weight=10.0,
        q_target=q_target,
        qpos_target=qpos_target,
        qrot_target=qrot_target,
        final_scale=2.0,
        kind="manipulation",
    )


def weighted_goal_cost(
    layout,
    q_weight: float,
    control_weight: float,
    qpos_weight: float,
    qrot_weight: float,
    q_target,
    qpos_target,
    qrot_target,
    final_scale: float = 2.0,
    kind: str = "weighted_goal",
) -> QuadraticGoalCost:
    """Manipulation-style cost with caller-supplied term weights."""
    for name in ("qpos", "qrot"):
        if not layout.has(name):
            raise ValueError(f"environment does not expose an index range for {name!r}")
    pieces = []
    for weight, name, target in (
        (q_weight, "q", q_target),
        (qpos_weight, "qpos", qpos_target),
        (qrot_weight, "qrot", qrot_target),
    ):
        start, stop = layout.range_of(name)
        target = np.asarray(target, dtype=float)
        if target.shape != (stop - start,):
            raise ValueError(f"{name} target has wrong dimension {target.shape}")
        pieces.append((weight, start, stop, target))
    running = tuple(StatePenalty(w, a, b, tgt) for w, a, b, tgt in pieces)
    final = tuple(
        StatePenalty(final_scale * w, a, b, tgt) for w, a, b, tgt in pieces
    )
    return QuadraticGoalCost(
        d_x=layout.d_x,
        running_terms=running,
        running_control_weight=control_weight,
        final_terms=final,
        final_control_weight=0.0,
        kind=kind,
    )


def imitation_cost(layout, demo, lift_height: float, horizon: int) -> QuadraticGoalCost:
    """Track a demonstration while lifting the object to ``lift_height``.

    ``||q_t - qhat_t||^2 + 0.1||u||^2 + 50||z - lift_height||^2`` with
    ``qhat_t`` read from the demonstration at each step. The final cost is
    identical to the running cost.
    """
    if demo.horizon != horizon:
        raise ValueError(
            f"demonstration horizon {demo.horizon} != env horizon {horizon}"
        )
    q_start, q_stop = layout.range_of("q")
    z_start, z_stop = layout.range_of("qpos")
    q_ref = demo.trajectory.states[:horizon, q_start:q_stop]
    shaping = StatePenalty(1.0, q_start, q_stop, q_ref)
    lift = StatePenalty(
        50.0, z_start, z_stop, np.full(z_stop - z_start, float(lift_height))
    )
    return QuadraticGoalCost(
        d_x=layout.d_x,
        running_terms=(shaping, lift),
        running_control_weight=0.1,
        final_terms=(shaping, lift),
        final_control_weight=0.1,
        kind="imitation",
    )


@dataclass(frozen=True)
class CostExpansion:
    """Per-timestep quadratic surrogate ``1/2 z'Hz + g'z + c`` with ``z = [x; u]``.

    ``uu_clamped`` records the timesteps where the action-action eigenvalue
    floor actually modified the Hessian.
    """

    H: Array  # (T, n, n)
    g: Array  # (T, n)
    c: Array  # (T,)
    d_x: int
    uu_clamped: Array = field(default=None)  # (T,) bool

    def __post_init__(self):
        for name in ("H", "g", "c"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if self.uu_clamped is None:
            object.__setattr__(
                self, "uu_clamped", np.zeros(self.H.shape[0], dtype=bool)
            )
        object.__setattr__(self, "uu_clamped", _frozen_array(self.uu_clamped, bool))

    @property
    def horizon(self) -> int:
        return self.H.shape[0]

    @property
    def d_u(self) -> int:
        return self.H.shape[1] - self.d_x

    def value(self, x: Array, u: Array, t: int) -> float:
        z = np.concatenate([x, u])
        return 0.5 * float(z @ self.H[t] @ z) + float(self.g[t] @ z) + float(self.c[t])


def _finite_difference_coefficients(cost, x: Array, u: Array, t: int, T: int):
    """Central-difference gradient and Hessian, converted to absolute form."""
    z0 = np.concatenate([x, u])
    n = z0.size
    d_x = x.size

    def f(z):
        return cost.evaluate(z[:d_x], z[d_x:], t, T)

    h = _FD_STEP * np.maximum(1.0, np.abs(z0))
    grad = np.empty(n)
    hess = np.empty((n, n))
    f0 = f(z0)
    for i in range(n):
        zp, zm = z0.copy(), z0.copy()
        zp[i] += h[i]
        zm[i] -= h[i]
        fp, fm = f(zp), f(zm)
        grad[i] = (fp - fm) / (2 * h[i])
        hess[i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            zpp, zpm, zmp, zmm = z0.copy(), z0.copy(), z0.copy(), z0.copy()
            zpp[[i, j]] += [h[i], h[j]]
            zpm[[i, j]] += [h[i], -h[j]]
            zmp[[i, j]] += [-h[i], h[j]]
            zmm[[i, j]] += [-h[i], -h[j]]
            hess[i, j] = hess[j, i] = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (
                4 * h[i] * h[j]
            )
    # Absolute form: value/gradient/Hessian at z0 rewritten around the origin.
    g = grad - hess @ z0
    c = f0 - 0.5 * z0 @ hess @ z0 - g @ z0
    return hess, g, c


def expand_cost(cost, rollouts: list[Trajectory]) -> CostExpansion:
    """Average the per-sample quadratic expansions of ``cost`` over rollouts.

    Analytic when the cost declares its quadratic structure, otherwise
    central finite differences around each sample. The averaged Hessian is
    symmetrized and its action-action block eigenvalues are clamped to at
    least ``UU_EIGENVALUE_FLOOR``.
    """
    if not rollouts:
        raise ValueError("at least one rollout is required")
    T = rollouts[0].horizon
    d_x, d_u = rollouts[0].d_x, rollouts[0].d_u
    n = d_x + d_u
    H = np.zeros((T, n, n))
    g = np.zeros((T, n))
    c = np.zeros(T)
    for t in range(T):
        analytic = cost.quadratic_coefficients(t, T, d_u)
        if analytic is not None:
            H[t], g[t], c[t] = analytic
            continue
        for i, traj in enumerate(rollouts):
            try:
                Hi, gi, ci = _finite_difference_coefficients(
                    cost, traj.states[t], traj.actions[t], t, T
                )
            except FloatingPointError:
                Hi = np.full((n, n), np.nan)
            if not (
                np.all(np.isfinite(Hi))
                and np.all(np.isfinite(gi))
                and np.isfinite(ci)
            ):
                raise ValueError(
                    f"cost expansion produced NaN at rollout {i}, timestep {t}"
                )
            H[t] += Hi / len(rollouts)
            g[t] += gi / len(rollouts)
            c[t] += ci / len(rollouts)
    H = 0.5 * (H + np.transpose(H, (0, 2, 1)))
    clamped = np.zeros(T, dtype=bool)
    iu = slice(d_x, n)
    for t in range(T):
        eigvals, eigvecs = np.linalg.eigh(H[t, iu, iu])
        if eigvals.min() < UU_EIGENVALUE_FLOOR:
            clamped[t] = True
            eigvals = np.maximum(eigvals, UU_EIGENVALUE_FLOOR)
            H[t, iu, iu] = eigvecs @ np.diag(eigvals) @ eigvecs.T
    return CostExpansion(H=H, g=g, c=c, d_x=d_x, uu_clamped=clamped)
