"""Independent finite-horizon Riccati recursion for the linear benchmark.

This is the ground-truth side of the solver's dual-route check: it consumes
the environment's true affine dynamics (never fitted ones) and the task
cost's declared quadratic structure, and runs a plain blockwise LQR
recursion written independently of the solver's joint-matrix backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import UU_EIGENVALUE_FLOOR
from .dynamics import LinearGaussianDynamics
from .trajectory import _frozen_array

Array = np.ndarray


@dataclass(frozen=True)
class QuadraticCostBlocks:
    """Per-timestep cost ``1/2 x'Q_xx x + q_x'x + 1/2 u'R u + q_u'u + const``."""

    Q_xx: Array  # (T, d_x, d_x)
    q_x: Array  # (T, d_x)
    R: Array  # (T, d_u, d_u)
    q_u: Array  # (T, d_u)
    const: Array  # (T,)

    def __post_init__(self):
        for name in ("Q_xx", "q_x", "R", "q_u", "const"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    @property
    def horizon(self) -> int:
        return self.Q_xx.shape[0]


@dataclass(frozen=True)
class RiccatiSolution:
    """Optimal time-varying affine law and quadratic cost-to-go."""

    K: Array  # (T, d_u, d_x)
    k: Array  # (T, d_u)
    V_xx: Array  # value Hessian at the initial time
    v_x: Array
    v_const: float

    def optimal_cost(self, x0: Array) -> float:
        x0 = np.asarray(x0, dtype=float)
        return 0.5 * float(x0 @ self.V_xx @ x0) + float(self.v_x @ x0) + self.v_const


def cost_blocks_from_quadratic(cost, T: int, d_u: int) -> QuadraticCostBlocks:
    """Extract separable (x, u) cost blocks from a quadratic task cost.

    The built-in task costs have no state-action cross terms. The
    action-action block is floored at the same minimum eigenvalue the
    expansion contract enforces, so the oracle solves the identical problem.
    """
    d_x = cost.d_x
    Q_xx = np.empty((T, d_x, d_x))
    q_x = np.empty((T, d_x))
    R = np.empty((T, d_u, d_u))
    q_u = np.empty((T, d_u))
    const = np.empty(T)
    for t in range(T):
        coeffs = cost.quadratic_coefficients(t, T, d_u)
        if coeffs is None:
            raise ValueError("oracle requires a cost with declared quadratic form")
        H, g, c = coeffs
        if np.any(H[:d_x, d_x:] != 0.0):
            raise ValueError("oracle expects no state-action cross terms")
        Q_xx[t] = H[:d_x, :d_x]
        q_x[t] = g[:d_x]
        R_t = H[d_x:, d_x:]
        eigvals, eigvecs = np.linalg.eigh(R_t)
        if eigvals.min() < UU_EIGENVALUE_FLOOR:
            eigvals = np.maximum(eigvals, UU_EIGENVALUE_FLOOR)
            R_t = eigvecs @ np.diag(eigvals) @ eigvecs.T
        R[t] = R_t
        q_u[t] = g[d_x:]
        const[t] = c
    return QuadraticCostBlocks(Q_xx=Q_xx, q_x=q_x, R=R, q_u=q_u, const=const)


def solve_riccati(
    A: Array, B: Array, c: Array, blocks: QuadraticCostBlocks
) -> RiccatiSolution:
    """Finite-horizon LQR for ``x' = A x + B u + c`` with per-step cost blocks."""
    T = blocks.horizon
    d_x, d_u = B.shape
    K = np.empty((T, d_u, d_x))
    k = np.empty((T, d_u))
    V = np.zeros((d_x, d_x))
    v = np.zeros(d_x)
    v0 = 0.0
    for t in reversed(range(T)):
        Vc_plus_v = V @ c + v
        Q_xx = blocks.Q_xx[t] + A.T @ V @ A
        Q_uu = blocks.R[t] + B.T @ V @ B
        Q_ux = B.T @ V @ A
        q_x = blocks.q_x[t] + A.T @ Vc_plus_v
        q_u = blocks.q_u[t] + B.T @ Vc_plus_v
        q_0 = blocks.const[t] + v0 + float(c @ v) + 0.5 * float(c @ V @ c)
        Q_uu_inv = np.linalg.inv(Q_uu)
        K[t] = -Q_uu_inv @ Q_ux
        k[t] = -Q_uu_inv @ q_u
        V = Q_xx + Q_ux.T @ K[t]
        V = 0.5 * (V + V.T)
        v = q_x + Q_ux.T @ k[t]
        v0 = q_0 + 0.5 * float(q_u @ k[t])
    return RiccatiSolution(K=K, k=k, V_xx=V, v_x=v, v_const=v0)


def oracle_for_env(env, cost) -> RiccatiSolution:
    """Solve the true linear-quadratic problem of an exactly linear env."""
    if env.true_affine is None:
        raise ValueError(f"environment {env.name!r} does not expose true dynamics")
    A, B, c = env.true_affine
    blocks = cost_blocks_from_quadratic(cost, env.horizon, env.d_u)
    return solve_riccati(A, B, c, blocks)


def true_dynamics_model(env, noise_cov: float = 0.0) -> LinearGaussianDynamics:
    """Tile an exactly linear env's true dynamics into a per-timestep model.

    Diagnostic/oracle use only; the learner always fits its own model.
    """
    if env.true_affine is None:
        raise ValueError(f"environment {env.name!r} does not expose true dynamics")
    A, B, c = env.true_affine
    T, d_x = env.horizon, env.d_x
    return LinearGaussianDynamics(
        f_x=np.tile(A, (T, 1, 1)),
        f_u=np.tile(B, (T, 1, 1)),
        f_c=np.tile(c, (T, 1)),
        F=np.tile(noise_cov * np.eye(d_x), (T, 1, 1)),
    )
