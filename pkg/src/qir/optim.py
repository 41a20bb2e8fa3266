"""Fitting routines: BLS subgradient descent and penalized composite descent.

The unpenalized fit minimizes the composite check loss by subgradient
steps whose size is chosen by backtracking line search (BLS): shrink eta
by factor b until the loss drops by more than a * eta * ||g||^2.

The penalized fit splits the objective into a smooth part
L~(beta) = loss(beta)/n - mu ||beta||^2 / 2 and a convex remainder, then
iterates the proximal map of the penalty, which for SCAD and MCP has a
closed piecewise form.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, OptimizationError
from .loss import CompositeObjective

ETA_MIN = 1e-16


@dataclass
class FitConfig:
    """Optimizer settings; defaults follow the simulation setup."""

    bls_a: float = 0.3
    bls_b: float = 0.5
    eta0: float = 1.0
    max_iter: int = 10000
    tol: float = 1e-6          # sup-norm step tolerance (unpenalized)
    obj_tol: float = 1e-10     # objective-change tolerance (penalized)
    init: object = "zeros"     # "zeros" | ("random", radius, seed) | warm array

    def __post_init__(self):
        if not (0.0 < self.bls_a < 1.0 and 0.0 < self.bls_b < 1.0):
            raise DomainError("BLS constants must lie in (0, 1)")
        if self.eta0 <= 0.0 or self.tol <= 0.0:
            raise DomainError("eta0 and tol must be positive")

    def initial_beta(self, dim):
        if isinstance(self.init, str):
            if self.init != "zeros":
                raise DomainError(f"unknown init {self.init!r}")
            return np.zeros(dim)
        if isinstance(self.init, tuple) and self.init and self.init[0] == "random":
            _, radius, seed = self.init
            rng = np.random.default_rng(seed)
            vec = rng.normal(size=dim)
            return radius * vec / np.linalg.norm(vec)
        beta = np.asarray(self.init, dtype=float).ravel()
        if beta.size != dim:
            raise DomainError(f"warm start has length {beta.size}, expected {dim}")
        return beta.copy()


@dataclass(frozen=True)
class PenaltySpec:
    """SCAD (a > 2, default 3.7) or MCP (gamma > 1) with tuning level lam."""

    kind: str = "scad"
    lam: float = 0.1
    a: float = 3.7
    gamma: float = 3.0

    def __post_init__(self):
        if self.kind not in ("scad", "mcp"):
            raise DomainError("penalty kind must be 'scad' or 'mcp'")
        if self.lam < 0.0:
            raise DomainError("lambda must be nonnegative")
        if self.kind == "scad" and self.a <= 2.0:
            raise DomainError("SCAD needs a > 2")
        if self.kind == "mcp" and self.gamma <= 1.0:
            raise DomainError("MCP needs gamma > 1")

    @property
    def L(self):
        return 1.0

    @property
    def mu(self):
        """Weak-convexity constant: p(t) + mu t^2 / 2 is convex."""
        if self.lam == 0.0:
            return 0.0  # no penalty, no convexification needed
        return 1.0 / (self.a - 1.0) if self.kind == "scad" else 1.0 / self.gamma


@dataclass
class FitResult:
    beta_hat: np.ndarray
    final_loss: float
    n_iter: int
    converged: bool
    loss_trace: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# penalties and proximal maps
# ---------------------------------------------------------------------------

def scad_penalty(spec, t):
    """SCAD value: linear up to lam, quadratic blend, constant beyond a*lam."""
    lam, a = spec.lam, spec.a
    t = np.abs(np.asarray(t, dtype=float))
    return np.select(
        [t <= lam, t <= a * lam],
        [lam * t, (2.0 * a * lam * t - t**2 - lam**2) / (2.0 * (a - 1.0))],
        default=lam**2 * (a + 1.0) / 2.0,
    )


def scad_derivative(spec, t):
    """d/dt SCAD at t != 0 (odd in t); one-sided limit lam at 0+."""
    lam, a = spec.lam, spec.a
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    mag = np.select(
        [at <= lam, at <= a * lam],
        [lam, (a * lam - at) / (a - 1.0)],
        default=0.0,
    )
    return np.where(t == 0.0, lam, np.sign(t) * mag)


def mcp_penalty(spec, t):
    lam, g = spec.lam, spec.gamma
    t = np.abs(np.asarray(t, dtype=float))
    return np.where(t <= g * lam, lam * t - t**2 / (2.0 * g), g * lam**2 / 2.0)


def mcp_derivative(spec, t):
    lam, g = spec.lam, spec.gamma
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    mag = np.where(at <= g * lam, lam - at / g, 0.0)
    return np.where(t == 0.0, lam, np.sign(t) * mag)


def penalty_value(spec, t):
    return scad_penalty(spec, t) if spec.kind == "scad" else mcp_penalty(spec, t)


def scad_prox(z, lam, eta, mu, a=3.7):
    """Closed-form SCAD proximal map for the composite update.

    z is the gradient step already divided by (1 + mu*eta); with
    nu = eta / (1 + mu*eta) the map is, region by region in |z|:
    zero, soft threshold, a rescaled middle branch, then the identity.
    Regions are applied in that order with first-match semantics.
    """
    nu = eta / (1.0 + mu * eta)
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    sz = np.sign(z)
    out = np.select(
        [az <= nu * lam, az <= (nu + 1.0) * lam, az <= a * lam],
        [
            0.0,
            z - sz * nu * lam,
            (z - sz * a * nu * lam / (a - 1.0)) / (1.0 - nu / (a - 1.0)),
        ],
        default=z,
    )
    return out if out.ndim else float(out)


def mcp_prox(z, lam, eta, mu, gamma):
    """Closed-form MCP proximal map, same z / nu convention as scad_prox."""
    nu = eta / (1.0 + mu * eta)
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    sz = np.sign(z)
    out = np.select(
        [az <= nu * lam, az <= gamma * lam],
        [0.0, (z - sz * nu * lam) / (1.0 - nu / gamma)],
        default=z,
    )
    return out if out.ndim else float(out)


def penalty_prox(spec, z, eta, mu):
    if spec.kind == "scad":
        return scad_prox(z, spec.lam, eta, mu, spec.a)
    return mcp_prox(z, spec.lam, eta, mu, spec.gamma)


# ---------------------------------------------------------------------------
# backtracking line search and the two fitters
# ---------------------------------------------------------------------------

def bls_step(loss_fn, grad, beta, eta0, a, b, loss0=None):
    """First eta in {eta0, b*eta0, ...} with loss(beta - eta g) - loss(beta)
    < -a * eta * ||g||^2; returns (stepped point, accepted eta)."""
    grad = np.asarray(grad, dtype=float)
    gnorm2 = float(grad @ grad)
    if gnorm2 == 0.0:
        raise OptimizationError("bls_step requires a nonzero gradient")
    if loss0 is None:
        loss0 = loss_fn(beta)
    eta = float(eta0)
    while eta >= ETA_MIN:
        cand = beta - eta * grad
        if loss_fn(cand) - loss0 < -a * eta * gnorm2:
            return cand, eta
        eta *= b
    raise OptimizationError("line search failed: step size underflow")


def _bls_step_diff(diff_fn, grad, beta, eta0, a, b):
    """bls_step with the decrease evaluated by a stable difference oracle."""
    gnorm2 = float(grad @ grad)
    eta = float(eta0)
    while eta >= ETA_MIN:
        cand = beta - eta * grad
        dval = diff_fn(cand)
        if dval < -a * eta * gnorm2:
            return cand, eta, dval
        eta *= b
    raise OptimizationError("line search failed: step size underflow")


def fit_cqr(family, links, data, grid, config=None):
    """Composite quantile regression estimate by BLS subgradient descent."""
    config = config or FitConfig()
    _check_identification(family, grid)
    obj = CompositeObjective(family, links, data, grid)
    beta = config.initial_beta(obj.dim())
    loss, grad, E = obj.loss_grad_state(beta)
    if not np.isfinite(loss):
        raise OptimizationError("initial point has non-finite loss")
    trace = [loss]
    eta_prev = config.eta0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite subgradient at iteration {it}")
        gmax = float(np.max(np.abs(grad)))
        if gmax == 0.0:
            converged = True
            break
        # restart near the last accepted step: one growth per iteration keeps
        # the search short without losing the BLS acceptance guarantee
        eta_start = min(config.eta0, eta_prev / config.bls_b)
        diff_fn = lambda cand: obj.loss_diff(cand, E)
        beta, eta_prev, dval = _bls_step_diff(
            diff_fn, grad, beta, eta_start, config.bls_a, config.bls_b
        )
        loss += dval
        _, grad, E = obj.loss_grad_state(beta)
        trace.append(loss)
        if eta_prev * gmax < config.tol and eta_start < config.eta0:
            # small step after a warm restart is not yet evidence of
            # stationarity; re-run the search from the full eta0
            gmax = float(np.max(np.abs(grad)))
            if gmax == 0.0:
                converged = True
                break
            diff_fn = lambda cand: obj.loss_diff(cand, E)
            beta, eta_prev, dval = _bls_step_diff(
                diff_fn, grad, beta, config.eta0, config.bls_a, config.bls_b
            )
            loss += dval
            _, grad, E = obj.loss_grad_state(beta)
            trace.append(loss)
            it += 1
        if eta_prev * gmax < config.tol:
            converged = True
            break
    return FitResult(
        beta_hat=beta,
        final_loss=loss,
        n_iter=it,
        converged=converged,
        loss_trace=np.asarray(trace),
    )


def fit_regularized(family, links, data, grid, spec, config=None):
    """Penalized composite quantile regression by composite gradient descent.

    Objective: loss(beta)/n + sum_j p_lam(beta_j). Each update takes a
    gradient step on the convexified smooth part
    L~(beta) = loss/n - mu ||beta||^2 / 2, divides by (1 + mu*eta) and
    applies the penalty's proximal map coordinatewise. Eta is chosen by
    BLS on the full objective against the prox-gradient norm, which keeps
    the objective trace nonincreasing.
    """
    config = config or FitConfig()
    _check_identification(family, grid)
    obj = CompositeObjective(family, links, data, grid)
    n = obj.n
    mu = spec.mu

    beta = config.initial_beta(obj.dim())
    loss, grad, E = obj.loss_grad_state(beta)
    if not np.isfinite(loss):
        raise OptimizationError("initial point has non-finite loss")
    pen = penalty_value(spec, beta)
    phi = loss / n + float(np.sum(pen))

    def prox_step(beta, E, pen, smooth_grad, eta_start):
        """(candidate, objective change, accepted eta); the change is an
        elementwise difference, so progress survives huge loss magnitudes."""
        eta = eta_start
        while eta >= ETA_MIN:
            z = (beta - eta * smooth_grad) / (1.0 + mu * eta)
            cand = penalty_prox(spec, z, eta, mu)
            step = cand - beta
            dphi = (obj.loss_diff(cand, E) / n
                    + float(np.sum(penalty_value(spec, cand) - pen)))
            # sufficient decrease against the prox-gradient map G = step/eta
            if dphi <= -config.bls_a * float(step @ step) / eta:
                return cand, dphi, eta
            eta *= config.bls_b
        raise OptimizationError("composite line search failed: step underflow")

    trace = [phi]
    eta_prev = config.eta0
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        if not np.all(np.isfinite(grad)):
            raise OptimizationError(f"non-finite subgradient at iteration {it}")
        smooth_grad = grad / n - mu * beta
        eta_start = min(config.eta0, eta_prev / config.bls_b)
        beta, dphi, eta_prev = prox_step(beta, E, pen, smooth_grad, eta_start)
        phi += dphi
        _, grad, E = obj.loss_grad_state(beta)
        pen = penalty_value(spec, beta)
        trace.append(phi)
        if -dphi < config.obj_tol and eta_start < config.eta0:
            # tiny decrease after a warm restart: confirm from the full eta0
            smooth_grad = grad / n - mu * beta
            beta, dphi, eta_prev = prox_step(beta, E, pen, smooth_grad, config.eta0)
            phi += dphi
            _, grad, E = obj.loss_grad_state(beta)
            pen = penalty_value(spec, beta)
            trace.append(phi)
            it += 1
        if -dphi < config.obj_tol:
            converged = True
            break
    return FitResult(
        beta_hat=beta,
        final_loss=phi,
        n_iter=it,
        converged=converged,
        loss_trace=np.asarray(trace),
    )


def _check_identification(family, grid):
    taus = grid.taus
    if family.name == "tukey":
        one_sided = np.all(taus > 0.5) or np.all(taus < 0.5)
        need = 3 if one_sided else 4
    elif family.name == "glambda":
        need = 4
    else:
        need = 1
    if grid.K < need:
        raise DomainError(
            f"{family.name} needs at least {need} levels on this grid for "
            f"identification, got {grid.K}"
        )
