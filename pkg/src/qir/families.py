"""Parametric quantile families with analytic index gradients.

Each family is defined by an explicit quantile function Q(tau, theta)
where theta is a short vector of indices (location, scale, tail, ...).
All evaluations broadcast: tau and the rows of theta may carry leading
batch axes, so a (K, 1) tau against an (n, d) theta yields (K, n).
"""

import numpy as np

from .errors import DomainError

# Below this |tail| the power-ratio kernels switch to their series limit;
# the series carries cubic terms so the switch is continuous to ~1e-24.
LIMIT_EPS = 1e-8
# Below this |tail| the derivative kernels use a second-order series to
# dodge the cancellation in the closed form.
GRAD_SERIES_EPS = 1e-4

EQUAL_QUANTILE_RTOL = 1e-10


def _powm1_over(eps, logx):
    """(x**eps - 1)/eps computed via expm1, with a series branch near eps=0."""
    eps = np.asarray(eps, dtype=float)
    small = np.abs(eps) < LIMIT_EPS
    safe = np.where(small, 1.0, eps)
    with np.errstate(over="ignore"):
        direct = np.expm1(safe * logx) / safe
    series = logx * (1.0 + eps * logx * (0.5 + eps * logx / 6.0))
    return np.where(small, series, direct)


def _dpowm1_over(eps, logx):
    """d/d(eps) of (x**eps - 1)/eps, series branch below GRAD_SERIES_EPS."""
    eps = np.asarray(eps, dtype=float)
    small = np.abs(eps) < GRAD_SERIES_EPS
    safe = np.where(small, 1.0, eps)
    with np.errstate(over="ignore"):
        xe = np.exp(safe * logx)
        direct = (safe * xe * logx - np.expm1(safe * logx)) / safe**2
    series = logx**2 * (0.5 + eps * logx * (1.0 / 3.0 + eps * logx / 8.0))
    return np.where(small, series, direct)


def _check_tau(tau):
    tau = np.asarray(tau, dtype=float)
    if tau.size and (np.any(tau <= 0.0) or np.any(tau >= 1.0) or not np.all(np.isfinite(tau))):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    return tau


def _log_tau_pair(tau):
    # log(tau) and log(1-tau); log1p keeps the upper tail accurate.
    return np.log(tau), np.log1p(-tau)


# ---------------------------------------------------------------------------
# standard normal quantile (Wichura's AS 241, double-precision branch)
# ---------------------------------------------------------------------------

_PPND16_A = np.array([
    3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
    1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
    3.3430575583588128105e4, 2.5090809287301226727e3,
])
_PPND16_B = np.array([
    1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
    5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
    2.8729085735721942674e4, 5.2264952788528545610e3,
])
_PPND16_C = np.array([
    1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
    3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
    2.27238449892691845833e-2, 7.74545014278341407640e-4,
])
_PPND16_D = np.array([
    1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
    6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
    5.47593808499534494600e-4, 1.05075007164441684324e-9,
])
def _polyval_ascending(coeffs, x):
    out = np.zeros_like(x)
    for c in coeffs[::-1]:
        out = out * x + c
    return out


_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _far_tail_quantile(q):
    """|Phi^{-1}(q)| for q below ~1.4e-11: asymptotic start, Newton on log-erfc."""
    import math

    u = -2.0 * math.log(q)
    x = math.sqrt(max(u - math.log(2.0 * math.pi * max(u, 1.0)), 1.0))
    log_q = math.log(q)
    for _ in range(6):
        tail = 0.5 * math.erfc(x / math.sqrt(2.0))
        if tail <= 0.0:
            break  # beyond erfc's range (~q < 1e-322); keep the asymptotic value
        log_phi = -0.5 * x * x - _LOG_SQRT_2PI
        hazard = math.exp(log_phi - math.log(tail))
        step = (math.log(tail) - log_q) / hazard
        x += step
        if abs(step) < 1e-13 * max(x, 1.0):
            break
    return x


def std_normal_quantile(tau):
    """Inverse standard normal CDF, accurate to well below 1e-9 absolute.

    Piecewise rational approximation with a central branch for
    |tau - 0.5| <= 0.425 and two tail branches in sqrt(-log) scale.
    """
    tau = _check_tau(tau)
    scalar = tau.ndim == 0
    p = np.atleast_1d(tau).astype(float)
    q = p - 0.5
    out = np.empty_like(p)

    central = np.abs(q) <= 0.425
    if np.any(central):
        r = 0.180625 - q[central] ** 2
        out[central] = q[central] * (
            _polyval_ascending(_PPND16_A, r) / _polyval_ascending(_PPND16_B, r)
        )

    tail = ~central
    if np.any(tail):
        pt = np.minimum(p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(pt))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _polyval_ascending(_PPND16_C, rn) / _polyval_ascending(_PPND16_D, rn)
        far = ~near
        if np.any(far):
            val[far] = [_far_tail_quantile(float(qq)) for qq in pt[far]]
        out[tail] = np.where(q[tail] < 0.0, -val, val)

    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------

class QuantileFamily:
    """Base class: an explicit quantile function with d covariate-free indices."""

    name = ""
    d = 0

    def check_theta(self, theta):
        """Validate admissibility of theta (last axis of length d); raise DomainError."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1:] != (self.d,):
            raise DomainError(
                f"{self.name} expects index vectors of length {self.d}, "
                f"got trailing shape {theta.shape[-1:]}"
            )
        if not np.all(np.isfinite(theta)):
            raise DomainError("index vector contains non-finite entries")
        return theta

    def quantile(self, tau, theta):
        raise NotImplementedError

    def grad_theta(self, tau, theta):
        raise NotImplementedError


class TukeyLambda(QuantileFamily):
    """Three-index family: location theta1, scale theta2 > 0, tail theta3 <= 1.

    Q(tau, theta) = theta1 + theta2 * (tau**theta3 - (1-tau)**theta3) / theta3,
    with the logistic limit theta1 + theta2*log(tau/(1-tau)) as theta3 -> 0.
    Decreasing the tail index gives heavier tails; theta3 = 1 is uniform-like
    (linear quantile function).
    """

    name = "tukey"
    d = 3

    def check_theta(self, theta):
        theta = super().check_theta(theta)
        if np.any(theta[..., 1] <= 0.0):
            raise DomainError("tukey scale index must be positive")
        if np.any(theta[..., 2] > 1.0):
            raise DomainError("tukey tail index must be <= 1")
        return theta

    def quantile(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        a, b = _log_tau_pair(tau)
        t3 = theta[..., 2]
        core = _powm1_over(t3, a) - _powm1_over(t3, b)
        return theta[..., 0] + theta[..., 1] * core

    def grad_theta(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        a, b = _log_tau_pair(tau)
        t2, t3 = theta[..., 1], theta[..., 2]
        d2 = _powm1_over(t3, a) - _powm1_over(t3, b)
        d3 = t2 * (_dpowm1_over(t3, a) - _dpowm1_over(t3, b))
        return np.stack([np.broadcast_to(1.0, d2.shape).copy(), d2, d3], axis=-1)


class GeneralizedLambda(QuantileFamily):
    """Four-index family with separate right and left tail indices.

    Q(tau, theta) = theta1 + theta2 * ((tau**theta3 - 1)/theta3
                                       - ((1-tau)**theta4 - 1)/theta4).
    Coincides with the Tukey lambda family when theta3 == theta4.
    """

    name = "glambda"
    d = 4

    def check_theta(self, theta):
        theta = super().check_theta(theta)
        if np.any(theta[..., 1] <= 0.0):
            raise DomainError("glambda scale index must be positive")
        return theta

    def quantile(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        a, b = _log_tau_pair(tau)
        core = _powm1_over(theta[..., 2], a) - _powm1_over(theta[..., 3], b)
        return theta[..., 0] + theta[..., 1] * core

    def grad_theta(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        a, b = _log_tau_pair(tau)
        t2, t3, t4 = theta[..., 1], theta[..., 2], theta[..., 3]
        d2 = _powm1_over(t3, a) - _powm1_over(t4, b)
        d3 = t2 * _dpowm1_over(t3, a)
        d4 = -t2 * _dpowm1_over(t4, b)
        return np.stack([np.broadcast_to(1.0, d2.shape).copy(), d2, d3, d4], axis=-1)


class LocationShiftGaussian(QuantileFamily):
    """Single location index added to the standard normal quantile function."""

    name = "gaussian"
    d = 1

    def quantile(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        return theta[..., 0] + std_normal_quantile(tau)

    def grad_theta(self, tau, theta, validate=True):
        tau = _check_tau(tau) if validate else np.asarray(tau, dtype=float)
        theta = self.check_theta(theta) if validate else np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(np.shape(tau), theta[..., 0].shape)
        return np.ones(shape + (1,))


TUKEY = TukeyLambda()
GLAMBDA = GeneralizedLambda()
GAUSSIAN = LocationShiftGaussian()

FAMILIES = {f.name: f for f in (TUKEY, GLAMBDA, GAUSSIAN)}


def get_family(name):
    """Look a family up by name ('tukey', 'glambda', 'gaussian')."""
    try:
        return FAMILIES[name]
    except KeyError:
        raise DomainError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}") from None


def distinct_at_levels(family, levels, theta_a, theta_b):
    """True iff the two index vectors disagree in Q at one or more levels.

    Disagreement means |Q_a - Q_b| > 1e-10 * (1 + max(|Q_a|, |Q_b|)), the
    floating-point version of the identification requirement that distinct
    indices must separate somewhere on the level set.
    """
    qa = family.quantile(np.asarray(levels, dtype=float), np.asarray(theta_a, dtype=float))
    qb = family.quantile(np.asarray(levels, dtype=float), np.asarray(theta_b, dtype=float))
    tol = EQUAL_QUANTILE_RTOL * (1.0 + np.maximum(np.abs(qa), np.abs(qb)))
    return bool(np.any(np.abs(qa - qb) > tol))
