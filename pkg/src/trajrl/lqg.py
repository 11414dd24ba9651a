"""Maximum-entropy LQR backward pass, Gaussian forward propagation,
closed-form trajectory KL divergence, and the KL-constrained update.

The constrained step minimizes expected cost subject to a bound on the KL
divergence between the new and previous controller's trajectory
distributions. Its Lagrangian is solved exactly per multiplier ``eta`` by a
backward pass on the surrogate cost ``cost / eta - log p_prev(u | x)``; the
multiplier itself is found by bracketed interpolation in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .costs import CostExpansion
from .dynamics import LinearGaussianDynamics
from .errors import SolverError
from .trajectory import _frozen_array

Array = np.ndarray

ETA_MIN = 1e-8
ETA_MAX = 1e16
KL_SLACK = 1e-2  # returned controllers satisfy KL <= epsilon * (1 + KL_SLACK)
MAX_DUAL_ITERATIONS = 50
QUU_SHIFT_START = 1e-6
QUU_SHIFT_ESCALATIONS = 20
# Keeps C_t invertible when Q_uu explodes on a badly fitted model; far below
# any covariance reached on the shipped benchmarks, so C_t = Q_uu^{-1} holds
# there exactly.
COVARIANCE_EIGENVALUE_FLOOR = 1e-12


@dataclass(frozen=True)
class LinearGaussianController:
    """Time-varying policy ``u_t ~ N(K_t x_t + k_t, C_t)`` in absolute coordinates."""

    K: Array  # (T, d_u, d_x)
    k: Array  # (T, d_u)
    C: Array  # (T, d_u, d_u)

    def __post_init__(self):
        for name in ("K", "k", "C"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        T, d_u, d_x = self.K.shape
        if self.k.shape != (T, d_u) or self.C.shape != (T, d_u, d_u):
            raise ValueError("controller blocks have inconsistent shapes")

    @property
    def horizon(self) -> int:
        return self.K.shape[0]

    @property
    def d_u(self) -> int:
        return self.K.shape[1]

    @property
    def d_x(self) -> int:
        return self.K.shape[2]

    def mean_action(self, x: Array, t: int) -> Array:
        return self.K[t] @ x + self.k[t]


@dataclass(frozen=True)
class TrajectoryDistribution:
    """Gaussian marginals of the joint ``(x_t, u_t)`` under controller and model."""

    mean: Array  # (T, d_x + d_u)
    cov: Array  # (T, d_x + d_u, d_x + d_u)
    x1_mean: Array
    x1_cov: Array
    d_x: int
    final_state_mean: Array = None
    final_state_cov: Array = None

    def __post_init__(self):
        for name in ("mean", "cov", "x1_mean", "x1_cov"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def state_means(self) -> Array:
        return self.mean[:, : self.d_x]

    @property
    def state_covs(self) -> Array:
        return self.cov[:, : self.d_x, : self.d_x]


@dataclass(frozen=True)
class DualState:
    """Outcome of the dual search over the KL multiplier."""

    eta: float
    eta_low: float
    eta_high: float
    iterations: int
    kl: float
    epsilon: float
    stalled: bool = False


@dataclass(frozen=True)
class BackwardPassInfo:
    """Diagnostics of one backward pass."""

    quu_shift_counts: Array  # (T,) number of diagonal escalations per step
    max_value_asymmetry: float

    @property
    def total_shifts(self) -> int:
        return int(np.sum(self.quu_shift_counts))


def backward_pass(
    dyn: LinearGaussianDynamics,
    cost: CostExpansion,
    prev: LinearGaussianController | None = None,
    eta: float = 1.0,
) -> tuple[LinearGaussianController, BackwardPassInfo]:
    """Run the Q/V recursions and return the maximum-entropy optimal controller.

    With ``prev`` given, the recursions run on the surrogate
    ``cost / eta - log p_prev(u | x)`` (the Lagrangian of the KL-constrained
    problem, scaled by ``1 / eta``); with ``prev=None`` they run on ``cost``
    directly, which is the unconstrained limit. Value terms beyond the
    horizon are zero. Gains are ``K_t = -Q_uu^{-1} Q_ux``,
    ``k_t = -Q_uu^{-1} Q_u`` and the policy covariance is ``C_t = Q_uu^{-1}``.
    A non-positive-definite ``Q_uu`` is repaired by escalating diagonal
    shifts, recorded in the returned info.
    """
    T, d_x, d_u = dyn.horizon, dyn.d_x, dyn.d_u
    if cost.horizon != T or cost.d_x != d_x or cost.d_u != d_u:
        raise ValueError("cost expansion dimensions do not match the dynamics")
    if prev is not None:
        if prev.horizon != T or prev.d_x != d_x or prev.d_u != d_u:
            raise ValueError("previous controller dimensions do not match")
        if eta <= 0:
            raise ValueError(f"eta must be positive, got {eta}")

    n = d_x + d_u
    ix, iu = slice(0, d_x), slice(d_x, n)
    K = np.empty((T, d_u, d_x))
    k = np.empty((T, d_u))
    C = np.empty((T, d_u, d_u))
    shift_counts = np.zeros(T, dtype=int)
    max_asym = 0.0

    V_xx = np.zeros((d_x, d_x))
    v_x = np.zeros(d_x)
    eye_u = np.eye(d_u)
    for t in reversed(range(T)):
        if prev is None:
            H_t = cost.H[t]
            g_t = cost.g[t]
        else:
            H_t, g_t = _surrogate_terms(cost.H[t], cost.g[t], prev, t, eta, d_x)
        f_z = np.concatenate([dyn.f_x[t], dyn.f_u[t]], axis=1)  # (d_x, n)
        Q_zz = H_t + f_z.T @ V_xx @ f_z
        Q_zz = 0.5 * (Q_zz + Q_zz.T)
        Q_z = g_t + f_z.T @ (v_x + V_xx @ dyn.f_c[t])
        if not (np.all(np.isfinite(Q_zz)) and np.all(np.isfinite(Q_z))):
            raise SolverError(f"Q terms overflowed at timestep {t}")

        Q_uu = Q_zz[iu, iu]
        Q_ux = Q_zz[iu, ix]
        Q_u = Q_z[iu]
        L, shifts = _robust_cholesky(Q_uu, eye_u)
        shift_counts[t] = shifts
        K[t] = -_cho_solve(L, Q_ux)
        k[t] = -_cho_solve(L, Q_u)
        C_t = _cho_solve(L, eye_u)
        C_t = 0.5 * (C_t + C_t.T)
        if np.min(np.diag(C_t)) < COVARIANCE_EIGENVALUE_FLOOR:
            eigvals, eigvecs = np.linalg.eigh(C_t)
            eigvals = np.maximum(eigvals, COVARIANCE_EIGENVALUE_FLOOR)
            C_t = eigvecs @ np.diag(eigvals) @ eigvecs.T
        C[t] = C_t

        V_xx_new = Q_zz[ix, ix] + Q_zz[ix, iu] @ K[t]
        max_asym = max(max_asym, float(np.max(np.abs(V_xx_new - V_xx_new.T))))
        V_xx = 0.5 * (V_xx_new + V_xx_new.T)
        v_x = Q_z[ix] + Q_zz[ix, iu] @ k[t]

    controller = LinearGaussianController(K=K, k=k, C=C)
    info = BackwardPassInfo(quu_shift_counts=shift_counts, max_value_asymmetry=max_asym)
    return controller, info


def _surrogate_terms(H, g, prev, t, eta, d_x):
    """Quadratic terms of ``cost/eta - log p_prev(u|x)`` in ``z = [x; u]``."""
    K_hat, k_hat = prev.K[t], prev.k[t]
    L_hat = np.linalg.cholesky(prev.C[t])
    C_inv = _cho_solve(L_hat, np.eye(prev.d_u))
    n = H.shape[0]
    prior_H = np.zeros((n, n))
    prior_g = np.zeros(n)
    CiK = C_inv @ K_hat
    prior_H[:d_x, :d_x] = K_hat.T @ CiK
    prior_H[:d_x, d_x:] = -CiK.T
    prior_H[d_x:, :d_x] = -CiK
    prior_H[d_x:, d_x:] = C_inv
    Cik = C_inv @ k_hat
    prior_g[:d_x] = K_hat.T @ Cik
    prior_g[d_x:] = -Cik
    return H / eta + prior_H, g / eta + prior_g


def _robust_cholesky(Q_uu: Array, eye_u: Array) -> tuple[Array, int]:
    if not np.all(np.isfinite(Q_uu)):
        raise SolverError("Q_uu contains non-finite entries")
    shift = QUU_SHIFT_START
    attempt = Q_uu
    for shifts in range(QUU_SHIFT_ESCALATIONS + 1):
        try:
            return np.linalg.cholesky(attempt), shifts
        except np.linalg.LinAlgError:
            attempt = Q_uu + shift * eye_u
            shift *= 10.0
    raise SolverError(
        "Q_uu remained non-positive-definite after "
        f"{QUU_SHIFT_ESCALATIONS} diagonal escalations"
    )


def _cho_solve(L: Array, B: Array) -> Array:
    return np.linalg.solve(L.T, np.linalg.solve(L, B))


def forward_pass(
    dyn: LinearGaussianDynamics,
    ctrl: LinearGaussianController,
    x1_mean: Array,
    x1_cov: Array,
) -> TrajectoryDistribution:
    """Exact Gaussian moment propagation of the closed-loop trajectory."""
    T, d_x, d_u = dyn.horizon, dyn.d_x, dyn.d_u
    if ctrl.horizon != T or ctrl.d_x != d_x or ctrl.d_u != d_u:
        raise ValueError("controller dimensions do not match the dynamics")
    x1_mean = np.asarray(x1_mean, dtype=float)
    x1_cov = np.asarray(x1_cov, dtype=float)
    if x1_mean.shape != (d_x,) or x1_cov.shape != (d_x, d_x):
        raise ValueError("initial-state moments have wrong dimensions")

    n = d_x + d_u
    mean = np.empty((T, n))
    cov = np.empty((T, n, n))
    mu = x1_mean
    Sigma = x1_cov
    for t in range(T):
        K_t, k_t, C_t = ctrl.K[t], ctrl.k[t], ctrl.C[t]
        mu_u = K_t @ mu + k_t
        cross = Sigma @ K_t.T
        Sigma_uu = K_t @ cross + C_t
        mean[t] = np.concatenate([mu, mu_u])
        cov[t, :d_x, :d_x] = Sigma
        cov[t, :d_x, d_x:] = cross
        cov[t, d_x:, :d_x] = cross.T
        cov[t, d_x:, d_x:] = Sigma_uu
        cov[t] = 0.5 * (cov[t] + cov[t].T)

        f_z = np.concatenate([dyn.f_x[t], dyn.f_u[t]], axis=1)
        mu = f_z @ mean[t] + dyn.f_c[t]
        Sigma = f_z @ cov[t] @ f_z.T + dyn.F[t]
        Sigma = 0.5 * (Sigma + Sigma.T)
    return TrajectoryDistribution(
        mean=mean,
        cov=cov,
        x1_mean=x1_mean,
        x1_cov=x1_cov,
        d_x=d_x,
        final_state_mean=mu,
        final_state_cov=Sigma,
    )


def kl_trajectory(
    dist: TrajectoryDistribution,
    new: LinearGaussianController,
    prev: LinearGaussianController,
) -> float:
    """Closed-form ``KL(p_new(tau) || p_prev(tau))`` under shared dynamics.

    Equals the sum over timesteps of the expected per-state policy KL, with
    the expectation over ``dist``'s state marginals taken in closed form.
    """
    if new.horizon != prev.horizon or new.horizon != dist.horizon:
        raise ValueError("horizons do not match")
    d_u = new.d_u
    total = 0.0
    for t in range(dist.horizon):
        mu_x = dist.state_means[t]
        Sigma_x = dist.state_covs[t]
        C, C_hat = new.C[t], prev.C[t]
        try:
            L_hat = np.linalg.cholesky(C_hat)
        except np.linalg.LinAlgError:
            raise ValueError(f"previous covariance at timestep {t} is singular")
        C_hat_inv = _cho_solve(L_hat, np.eye(d_u))
        dK = prev.K[t] - new.K[t]
        dk = prev.k[t] - new.k[t]
        gap = dK @ mu_x + dk
        quad = float(gap @ C_hat_inv @ gap)
        quad += float(np.trace(C_hat_inv @ dK @ Sigma_x @ dK.T))
        logdet_hat = 2.0 * float(np.sum(np.log(np.diag(L_hat))))
        logdet_new = 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(C)))))
        total += 0.5 * (
            float(np.trace(C_hat_inv @ C)) + quad - d_u + logdet_hat - logdet_new
        )
    return total


def expected_cost(dist: TrajectoryDistribution, cost: CostExpansion) -> float:
    """Closed-form expectation of the quadratic surrogate under ``dist``."""
    if cost.horizon != dist.horizon:
        raise ValueError("horizons do not match")
    total = 0.0
    for t in range(dist.horizon):
        mu, Sigma = dist.mean[t], dist.cov[t]
        total += (
            0.5 * float(np.trace(cost.H[t] @ Sigma))
            + 0.5 * float(mu @ cost.H[t] @ mu)
            + float(cost.g[t] @ mu)
            + float(cost.c[t])
        )
    return total


def solve_kl_constrained(
    dyn: LinearGaussianDynamics,
    cost: CostExpansion,
    prev: LinearGaussianController,
    epsilon: float,
    x1_mean: Array,
    x1_cov: Array,
    eta_init: float = 1.0,
) -> tuple[LinearGaussianController, DualState]:
    """Minimize expected cost subject to ``KL(p_new || p_prev) <= epsilon``.

    The multiplier is bracketed geometrically from ``eta_init`` within
    ``[1e-8, 1e16]`` and then refined by log-space interpolation guarded by
    bisection, stopping once the achieved KL is within 10% of ``epsilon`` (or
    after 50 evaluations). Among all evaluated iterates the one with the
    largest KL not exceeding ``epsilon * 1.01`` is returned, so the
    constraint always holds up to that slack. If even the strongest
    multiplier cannot reach the bound, the previous controller is returned
    with a ``stalled`` flag: there is no trust-region room.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")

    evaluations = 0
    best: tuple[float, float, LinearGaussianController] | None = None  # (kl, eta, ctrl)

    def evaluate(eta: float):
        nonlocal evaluations, best
        evaluations += 1
        try:
            ctrl, _ = backward_pass(dyn, cost, prev, eta)
            dist = forward_pass(dyn, ctrl, x1_mean, x1_cov)
            kl = kl_trajectory(dist, ctrl, prev)
        except SolverError:
            # A multiplier too weak for this model's conditioning behaves
            # like an unbounded KL: push the search toward stronger ones.
            return np.inf, None
        if not np.isfinite(kl):
            return np.inf, None
        if kl <= epsilon * (1.0 + KL_SLACK):
            if best is None or kl > best[0]:
                best = (kl, eta, ctrl)
        return kl, ctrl

    eta = float(np.clip(eta_init, ETA_MIN, ETA_MAX))
    kl, _ = evaluate(eta)

    # Bracket so that kl(eta_low) > epsilon > kl(eta_high); KL decreases in eta.
    eta_low = eta_high = eta
    kl_low = kl_high = kl
    while kl_high > epsilon and eta_high < ETA_MAX and evaluations < MAX_DUAL_ITERATIONS:
        eta_low, kl_low = eta_high, kl_high
        eta_high = min(eta_high * 10.0, ETA_MAX)
        kl_high, _ = evaluate(eta_high)
    if kl_high > epsilon * (1.0 + KL_SLACK):
        # Even the strongest multiplier exceeds the bound: no room to move.
        dual = DualState(
            eta=eta_high,
            eta_low=eta_low,
            eta_high=eta_high,
            iterations=evaluations,
            kl=0.0,
            epsilon=epsilon,
            stalled=True,
        )
        return prev, dual
    while kl_low <= epsilon and eta_low > ETA_MIN and evaluations < MAX_DUAL_ITERATIONS:
        eta_high, kl_high = eta_low, kl_low
        eta_low = max(eta_low * 0.1, ETA_MIN)
        kl_low, _ = evaluate(eta_low)

    if kl_low <= epsilon:
        # The constraint is inactive even at the weakest multiplier: take the
        # exact unconstrained limit (no prior term) if it is feasible too.
        try:
            ctrl_free, _ = backward_pass(dyn, cost, prev=None)
            dist_free = forward_pass(dyn, ctrl_free, x1_mean, x1_cov)
            kl_free = kl_trajectory(dist_free, ctrl_free, prev)
        except (SolverError, ValueError):
            kl_free = np.inf
        if np.isfinite(kl_free) and kl_free <= epsilon * (1.0 + KL_SLACK):
            best = (kl_free, eta_low, ctrl_free)
        kl_best, eta_best, ctrl_best = best
        dual = DualState(
            eta=eta_best,
            eta_low=eta_low,
            eta_high=eta_high,
            iterations=evaluations,
            kl=kl_best,
            epsilon=epsilon,
        )
        return ctrl_best, dual

    bracket = (eta_low, eta_high)
    kl_bracket = (kl_low, kl_high)
    while evaluations < MAX_DUAL_ITERATIONS:
        done = best is not None and abs(best[0] - epsilon) <= 0.1 * epsilon
        if done:
            break
        lo, hi = bracket
        kl_lo, kl_hi = kl_bracket
        # Log-log interpolation toward kl = epsilon, clipped into the bracket
        # interior so progress is at least bisection-like.
        log_lo, log_hi = np.log(lo), np.log(hi)
        y_lo, y_hi = np.log(max(kl_lo, 1e-300)), np.log(max(kl_hi, 1e-300))
        if np.isfinite(y_lo) and np.isfinite(y_hi) and y_lo != y_hi:
            frac = (y_lo - np.log(epsilon)) / (y_lo - y_hi)
        else:
            frac = 0.5
        frac = float(np.clip(frac, 0.1, 0.9))
        eta_mid = float(np.exp(log_lo + frac * (log_hi - log_lo)))
        kl_mid, _ = evaluate(eta_mid)
        if kl_mid > epsilon:
            bracket = (eta_mid, hi)
            kl_bracket = (kl_mid, kl_hi)
        else:
            bracket = (lo, eta_mid)
            kl_bracket = (kl_lo, kl_mid)

    kl_best, eta_best, ctrl_best = best
    dual = DualState(
        eta=eta_best,
        eta_low=bracket[0],
        eta_high=bracket[1],
        iterations=evaluations,
        kl=kl_best,
        epsilon=epsilon,
    )
    return ctrl_best, dual


def init_controller(
    T: int, d_x: int, d_u: int, cov_scale: float
) -> LinearGaussianController:
    """Zero-mean controller with fixed isotropic covariance ``cov_scale * I``."""
    if cov_scale <= 0:
        raise ValueError(f"cov_scale must be positive, got {cov_scale}")
    return LinearGaussianController(
        K=np.zeros((T, d_u, d_x)),
        k=np.zeros((T, d_u)),
        C=np.tile(cov_scale * np.eye(d_u), (T, 1, 1)),
    )
