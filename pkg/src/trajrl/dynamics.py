"""Time-varying linear-Gaussian dynamics fitted from few rollouts.

Per timestep, the empirical moments of ``[x_t; u_t; x_{t+1}]`` tuples are
blended with the moments of a Gaussian-mixture prior under a
normal-inverse-Wishart update, then conditioned to obtain
``x' ~ N(f_x x + f_u u + f_c, F)``. The mixture is fit by EM on tuples
pooled across rollouts and timesteps, which keeps the regression well posed
when the number of rollouts is far below the state dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .trajectory import Trajectory, _frozen_array

Array = np.ndarray

EM_COVARIANCE_FLOOR = 1e-6
CONDITIONING_RIDGE = 1e-8
DEGENERATE_WEIGHT = 1e-12


@dataclass(frozen=True)
class LinearGaussianDynamics:
    """Per-timestep model ``x' ~ N(f_x x + f_u u + f_c, F)``."""

    f_x: Array  # (T, d_x, d_x)
    f_u: Array  # (T, d_x, d_u)
    f_c: Array  # (T, d_x)
    F: Array  # (T, d_x, d_x)
    ridge_activations: Array = field(default=None, compare=False)  # (T,) bool

    def __post_init__(self):
        for name in ("f_x", "f_u", "f_c", "F"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))
        if self.ridge_activations is None:
            object.__setattr__(
                self, "ridge_activations", np.zeros(self.f_x.shape[0], dtype=bool)
            )
        object.__setattr__(
            self, "ridge_activations", _frozen_array(self.ridge_activations, bool)
        )
        if not all(
            np.all(np.isfinite(arr)) for arr in (self.f_x, self.f_u, self.f_c, self.F)
        ):
            raise ValueError("fitted dynamics contain non-finite entries")

    @property
    def horizon(self) -> int:
        return self.f_x.shape[0]

    @property
    def d_x(self) -> int:
        return self.f_x.shape[1]

    @property
    def d_u(self) -> int:
        return self.f_u.shape[2]

    def predict_mean(self, x: Array, u: Array, t: int) -> Array:
        return self.f_x[t] @ x + self.f_u[t] @ u + self.f_c[t]


@dataclass(frozen=True)
class NiwStrength:
    """Effective prior sample counts: ``m`` for the mean, ``n0`` for the covariance."""

    m: float = 1.0
    n0: float = 1.0

    def __post_init__(self):
        if self.m <= 0 or self.n0 <= 0:
            raise ValueError("prior strengths must be positive")


@dataclass(frozen=True)
class GmmPrior:
    """Gaussian mixture over pooled ``[x; u; x']`` tuples, with EM diagnostics."""

    weights: Array  # (K,)
    means: Array  # (K, D)
    covariances: Array  # (K, D, D)
    log_likelihood: float
    em_iterations: int
    log_likelihood_history: Array = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("weights", "means", "covariances", "log_likelihood_history"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def moments(self, point: Array) -> tuple[Array, Array]:
        """Responsibility-weighted mean and covariance evaluated at ``point``.

        Responsibilities are the posterior component probabilities of
        ``point``; the returned covariance includes the between-component
        spread, so it is the full mixture covariance under those weights.
        """
        log_resp = _component_log_densities(
            point[None, :], self.means, self.covariances
        ) + np.log(self.weights)
        resp = np.exp(log_resp[0] - logsumexp(log_resp[0]))
        mu0 = resp @ self.means
        diff = self.means - mu0
        phi = np.einsum("k,kij->ij", resp, self.covariances)
        phi += np.einsum("k,ki,kj->ij", resp, diff, diff)
        return mu0, 0.5 * (phi + phi.T)


def _component_log_densities(X: Array, means: Array, covs: Array) -> Array:
    """Log N(x; mu_k, Sigma_k) for every point and component, via Cholesky."""
    N, D = X.shape
    K = means.shape[0]
    out = np.empty((N, K))
    norm = -0.5 * D * np.log(2.0 * np.pi)
    for kk in range(K):
        L = np.linalg.cholesky(covs[kk])
        diff = (X - means[kk]).T
        solved = np.linalg.solve(L, diff)
        out[:, kk] = norm - np.sum(np.log(np.diag(L))) - 0.5 * np.sum(solved**2, axis=0)
    return out


def _kmeanspp_centers(X: Array, K: int, rng: np.random.Generator) -> Array:
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(X.shape[0])]
    sq_dist = np.sum((X - centers[0]) ** 2, axis=1)
    for kk in range(1, K):
        total = sq_dist.sum()
        if total <= 0:
            centers[kk] = X[rng.integers(X.shape[0])]
            continue
        centers[kk] = X[rng.choice(X.shape[0], p=sq_dist / total)]
        sq_dist = np.minimum(sq_dist, np.sum((X - centers[kk]) ** 2, axis=1))
    return centers


def fit_gmm(tuples: Array, K: int, seed: int, max_iters: int = 50) -> GmmPrior:
    """Fit a ``K``-component Gaussian mixture by EM.

    Initialization is k-means++-style seeding of the component means; every
    M-step adds a ``1e-6 I`` covariance floor. The recorded log-likelihood
    sequence is non-decreasing: an iteration that would decrease it (possible
    only through the floor) is discarded and EM stops there. A component
    whose weight collapses below ``1e-12`` is re-seeded once at the worst
    covered point, then dropped. Deterministic given ``seed``.
    """
    X = np.asarray(tuples, dtype=float)
    if X.ndim != 2:
        raise ValueError("tuples must be a 2-D array of pooled samples")
    N, D = X.shape
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if K > N:
        raise ValueError(f"K={K} exceeds the number of tuples ({N})")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(X, K, rng)
    assign = np.argmin(
        np.sum((X[:, None, :] - means[None, :, :]) ** 2, axis=2), axis=1
    )
    global_cov = np.cov(X.T, bias=True).reshape(D, D) + EM_COVARIANCE_FLOOR * np.eye(D)
    covs = np.empty((K, D, D))
    weights = np.empty(K)
    for kk in range(K):
        members = X[assign == kk]
        weights[kk] = max(len(members), 1) / N
        if len(members) > 1:
            covs[kk] = np.cov(members.T, bias=True).reshape(D, D)
            covs[kk] += EM_COVARIANCE_FLOOR * np.eye(D)
        else:
            covs[kk] = global_cov
    weights /= weights.sum()

    reseeded = np.zeros(K, dtype=bool)
    history: list[float] = []
    prev_ll = -np.inf
    iterations = 0
    for _ in range(max_iters):
        log_dens = _component_log_densities(X, means, covs) + np.log(weights)
        ll = float(np.sum(logsumexp(log_dens, axis=1)))
        if ll < prev_ll:
            break
        history.append(ll)
        iterations += 1
        if np.isfinite(prev_ll) and abs(ll - prev_ll) < 1e-8 * (abs(prev_ll) + 1.0):
            break
        prev_ll = ll

        log_resp = log_dens - logsumexp(log_dens, axis=1, keepdims=True)
        resp = np.exp(log_resp)
        mass = resp.sum(axis=0)

        degenerate = np.flatnonzero(mass / N < DEGENERATE_WEIGHT)
        drop = []
        for kk in degenerate:
            if not reseeded[kk]:
                reseeded[kk] = True
                worst = np.argmin(logsumexp(log_dens, axis=1))
                resp[:, kk] = 0.0
                resp[worst, kk] = 1.0
                mass = resp.sum(axis=0)
            else:
                drop.append(kk)
        if drop:
            keep = np.setdiff1d(np.arange(means.shape[0]), drop)
            means, covs = means[keep], covs[keep]
            weights, reseeded = weights[keep], reseeded[keep]
            resp, mass = resp[:, keep], mass[keep]
            prev_ll = -np.inf  # model changed; restart the monotone sequence
            history.clear()

        weights = mass / mass.sum()
        means = (resp.T @ X) / mass[:, None]
        for kk in range(means.shape[0]):
            diff = X - means[kk]
            covs[kk] = (resp[:, kk, None] * diff).T @ diff / mass[kk]
            covs[kk] = 0.5 * (covs[kk] + covs[kk].T) + EM_COVARIANCE_FLOOR * np.eye(D)

    return GmmPrior(
        weights=weights,
        means=means,
        covariances=covs,
        log_likelihood=history[-1] if history else -np.inf,
        em_iterations=iterations,
        log_likelihood_history=np.asarray(history),
    )


class Conditioned(NamedTuple):
    coeffs: Array
    offset: Array
    residual_cov: Array
    ridge_used: bool


def condition_gaussian(mean: Array, cov: Array, in_dim: int) -> Conditioned:
    """Condition a joint Gaussian on its first ``in_dim`` coordinates.

    Returns ``coeffs = S_oi S_ii^-1``, ``offset = mu_o - coeffs mu_i`` and the
    symmetrized residual covariance. A singular input block is regularized
    with a trace-scaled ridge and flagged.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    D = mean.shape[0]
    if cov.shape != (D, D):
        raise ValueError("mean and covariance dimensions disagree")
    if not 0 < in_dim < D:
        raise ValueError(f"in_dim must be in (0, {D}), got {in_dim}")
    S_ii = cov[:in_dim, :in_dim]
    S_oi = cov[in_dim:, :in_dim]
    S_oo = cov[in_dim:, in_dim:]
    ridge_used = False
    scale = np.trace(S_ii) / in_dim
    ridge = CONDITIONING_RIDGE * (scale if scale > 0 else 1.0)
    attempt = S_ii
    for _ in range(8):
        try:
            L = np.linalg.cholesky(attempt)
            break
        except np.linalg.LinAlgError:
            ridge_used = True
            attempt = attempt + ridge * np.eye(in_dim)
            ridge *= 10.0
    else:
        raise np.linalg.LinAlgError("input covariance block is irrecoverably singular")
    # coeffs = S_oi S_ii^-1 via two triangular solves.
    coeffs = np.linalg.solve(L.T, np.linalg.solve(L, S_oi.T)).T
    offset = mean[in_dim:] - coeffs @ mean[:in_dim]
    residual = S_oo - coeffs @ S_oi.T
    residual = 0.5 * (residual + residual.T)
    return Conditioned(coeffs, offset, residual, ridge_used)


def dynamics_tuples(rollouts: list[Trajectory]) -> Array:
    """Pool ``[x_t; u_t; x_{t+1}]`` tuples over rollouts and timesteps."""
    rows = []
    for traj in rollouts:
        for t in range(traj.horizon):
            rows.append(
                np.concatenate([traj.states[t], traj.actions[t], traj.states[t + 1]])
            )
    return np.asarray(rows)


def fit_dynamics(
    rollouts: list[Trajectory],
    prior: GmmPrior | None,
    strength: NiwStrength = NiwStrength(),
) -> LinearGaussianDynamics:
    """Fit time-varying linear-Gaussian dynamics to rollouts.

    For each timestep the empirical mean and covariance of the
    ``[x_t; u_t; x_{t+1}]`` tuples are blended with the prior moments
    (evaluated at the empirical mean) under a normal-inverse-Wishart update
    with strengths ``(m, n0)``, then conditioned on ``[x; u]``. With
    ``prior=None`` the empirical moments are used directly, which requires
    enough rollouts to determine them.
    """
    if not rollouts:
        raise ValueError("at least one rollout is required")
    T = rollouts[0].horizon
    if any(traj.horizon != T for traj in rollouts):
        raise ValueError("all rollouts must share the same horizon")
    N = len(rollouts)
    if N < 2 and prior is None:
        raise ValueError("a single rollout has no covariance; provide a prior")
    d_x, d_u = rollouts[0].d_x, rollouts[0].d_u
    in_dim = d_x + d_u

    f_x = np.empty((T, d_x, d_x))
    f_u = np.empty((T, d_x, d_u))
    f_c = np.empty((T, d_x))
    F = np.empty((T, d_x, d_x))
    ridge_flags = np.zeros(T, dtype=bool)
    states = np.stack([traj.states for traj in rollouts])  # (N, T+1, d_x)
    actions = np.stack([traj.actions for traj in rollouts])  # (N, T, d_u)
    for t in range(T):
        pts = np.concatenate(
            [states[:, t, :], actions[:, t, :], states[:, t + 1, :]], axis=1
        )
        emp_mean = pts.mean(axis=0)
        centered = pts - emp_mean
        emp_cov = centered.T @ centered / N
        if prior is not None:
            mu0, phi = prior.moments(emp_mean)
            m, n0 = strength.m, strength.n0
            mean = (m * mu0 + N * emp_mean) / (m + N)
            dev = emp_mean - mu0
            cov = (
                n0 * phi + N * emp_cov + (N * m / (N + m)) * np.outer(dev, dev)
            ) / (n0 + N)
        else:
            mean, cov = emp_mean, emp_cov
        coeffs, offset, residual, ridge_used = condition_gaussian(mean, cov, in_dim)
        ridge_flags[t] = ridge_used
        f_x[t] = coeffs[:, :d_x]
        f_u[t] = coeffs[:, d_x:]
        f_c[t] = offset
        F[t] = _clamp_psd(residual)
    return LinearGaussianDynamics(
        f_x=f_x, f_u=f_u, f_c=f_c, F=F, ridge_activations=ridge_flags
    )


def _clamp_psd(matrix: Array, tolerance: float = 1e-10) -> Array:
    """Clamp tiny negative eigenvalues to zero; larger ones are an error."""
    eigvals, eigvecs = np.linalg.eigh(matrix)
    if eigvals.min() < -tolerance * max(1.0, abs(eigvals.max())):
        raise ValueError("residual covariance is significantly indefinite")
    if eigvals.min() < 0:
        matrix = eigvecs @ np.diag(np.maximum(eigvals, 0.0)) @ eigvecs.T
        matrix = 0.5 * (matrix + matrix.T)
    return matrix


def default_component_count(n_tuples: int) -> int:
    """Mixture size rule: one component per 40 pooled tuples, within [2, 20]."""
    return max(2, min(20, n_tuples // 40))
