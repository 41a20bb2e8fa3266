"""Asymptotic covariance of the composite estimator and prediction intervals.

The estimator's limiting covariance has the sandwich form
Omega1^{-1} Omega0 Omega1^{-1}, where Omega0 collects cross-level
covariances of the score and Omega1 weights the outer products of the
quantile gradients by the conditional density at each fitted level.
Densities come from a symmetric difference quotient of the fitted
quantile curve, f^ = 2h / (Q(tau + h) - Q(tau - h)).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDensityError, DomainError, SingularityError
from .families import std_normal_quantile

MAX_CONDITION = 1e12
EIG_FLOOR = 1e-12
DENOM_FLOOR = 1e-12


@dataclass
class CovarianceEstimate:
    """Sample estimates of the sandwich pieces at a fitted model."""

    omega0: np.ndarray
    omega1: np.ndarray
    sandwich: np.ndarray
    n: int
    bandwidth: float


def default_bandwidth(n, tau_max):
    """n^(-1/3), clipped so the upper grid level plus h stays below 1."""
    return float(min(n ** (-1.0 / 3.0), (1.0 - tau_max) / 2.0))


def density_at_quantile(model, x, tau, h):
    """Conditional density at the model's tau-quantile via a difference quotient."""
    tau, h = float(tau), float(h)
    if h <= 0.0 or tau - h <= 0.0 or tau + h >= 1.0:
        raise DomainError("need h > 0 with tau +/- h inside (0, 1)")
    hi = model.predict_quantile(x, tau + h)
    lo = model.predict_quantile(x, tau - h)
    denom = hi - lo
    if denom <= DENOM_FLOOR:
        raise DegenerateDensityError(
            f"quantile curve difference {denom:.3e} too small at tau={tau}"
        )
    return 2.0 * h / denom


def _density_matrix(model, X, taus, h):
    """f^_ik for every row i and level k; (K, n)."""
    theta = model.index_matrix(X)
    q_hi = model.family.quantile(taus[:, None] + h, theta)
    q_lo = model.family.quantile(taus[:, None] - h, theta)
    denom = q_hi - q_lo
    if np.any(denom <= DENOM_FLOOR):
        k, i = map(int, np.argwhere(denom <= DENOM_FLOOR)[0])
        raise DegenerateDensityError(
            f"degenerate quantile spacing at row {i}, level {taus[k]:.4f}"
        )
    return 2.0 * h / denom


def _solve_spd(omega1, rhs):
    """omega1^{-1} rhs via symmetric eigendecomposition with a floor."""
    w, V = np.linalg.eigh(omega1)
    w_max = float(w[-1])
    if w_max <= 0.0 or w[0] <= 0.0 or w_max / w[0] > MAX_CONDITION:
        raise SingularityError(
            f"density-weighted curvature matrix is numerically singular "
            f"(smallest eigenvalue {w[0]:.3e})",
            eigenvalue=float(w[0]),
        )
    w = np.maximum(w, EIG_FLOOR * w_max)
    return V @ ((V.T @ rhs) / w[:, None])


def estimate_sandwich(model, data, grid, h=None):
    """Sample sandwich covariance at the fitted model.

    Omega0 = sum_{k,k'} min(tau_k, tau_k')(1 - max(tau_k, tau_k'))
             * avg_i grad_ik grad_ik'^T,
    Omega1 = sum_k avg_i f^_ik grad_ik grad_ik^T, with grad_ik the
    beta-gradient of Q(tau_k, theta(x_i, beta)).
    """
    taus = grid.taus
    if h is None:
        h = default_bandwidth(data.n, float(taus[-1]))
    if taus[0] - h <= 0.0 or taus[-1] + h >= 1.0:
        raise DomainError("bandwidth pushes grid levels outside (0, 1)")
    n = data.n
    G = np.stack([model.grad_beta_matrix(data.X, float(t)) for t in taus])  # (K, n, dp)
    F = _density_matrix(model, data.X, taus, h)  # (K, n)

    tmin = np.minimum.outer(taus, taus)
    tmax = np.maximum.outer(taus, taus)
    C = tmin * (1.0 - tmax)
    K = taus.size
    dp = G.shape[2]
    omega0 = np.zeros((dp, dp))
    for k in range(K):
        for kk in range(k, K):
            block = G[k].T @ G[kk] / n
            if kk == k:
                omega0 += C[k, k] * block
            else:
                omega0 += C[k, kk] * (block + block.T)
    omega0 = (omega0 + omega0.T) / 2.0

    omega1 = np.zeros((dp, dp))
    for k in range(K):
        omega1 += (G[k] * F[k][:, None]).T @ G[k] / n
    omega1 = (omega1 + omega1.T) / 2.0

    inner = _solve_spd(omega1, omega0)
    sandwich = _solve_spd(omega1, inner.T).T
    sandwich = (sandwich + sandwich.T) / 2.0
    return CovarianceEstimate(
        omega0=omega0, omega1=omega1, sandwich=sandwich, n=n, bandwidth=float(h)
    )


def predict_quantile_ci(model, cov, data, x, tau_star, level=0.95):
    """Delta-method interval for the conditional tau*-quantile at x.

    The gradient direction is the sample average of the beta-gradients of
    Q(tau*, theta(X_i, beta)) over the dataset rows, mirroring the
    population expectation in the limit variance.
    """
    if not 0.0 <= level < 1.0:
        raise DomainError("confidence level must lie in [0, 1)")
    center = model.predict_quantile(x, float(tau_star))
    delta = model.grad_beta_matrix(data.X, float(tau_star)).mean(axis=0)
    var = float(delta @ cov.sandwich @ delta) / cov.n
    z = std_normal_quantile((1.0 + level) / 2.0) if level > 0.0 else 0.0
    half = z * np.sqrt(max(var, 0.0))
    return float(center - half), float(center + half)
