"""Index maps theta_j = g_j(x' beta_j) and conditional quantile prediction.

A fitted model is a quantile family plus one link and one coefficient
block per index. Block j of beta (length p) parameterizes index j through
its link, so the conditional quantile at covariates x is
Q(tau, (g_1(x'b_1), ..., g_d(x'b_d))).
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, DomainError, EvaluationError
from .families import FAMILIES, GAUSSIAN, QuantileFamily, get_family

SOFTPLUS_LINEAR_CUTOFF = 30.0


def softplus(t):
    """log(1 + exp(t)) without overflow: linear above 30, exp(t) below -30.

    Output is clamped to stay strictly positive where exp underflows, so
    a softplus-linked scale index is admissible for any finite input.
    """
    t = np.asarray(t, dtype=float)
    out = np.log1p(np.exp(np.minimum(t, SOFTPLUS_LINEAR_CUTOFF)))
    out = np.maximum(out, np.finfo(float).tiny)
    return np.where(t > SOFTPLUS_LINEAR_CUTOFF, t, out)


def sigmoid(t):
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class Link:
    """Monotone map from a linear index to an admissible quantile index."""

    name: str

    def __call__(self, t):
        if self.name == "identity":
            return np.asarray(t, dtype=float)
        if self.name == "softplus":
            return softplus(t)
        return 1.0 - softplus(t)

    def deriv(self, t):
        if self.name == "identity":
            return np.ones_like(np.asarray(t, dtype=float))
        if self.name == "softplus":
            return sigmoid(t)
        return -sigmoid(t)


LINKS = {name: Link(name) for name in ("identity", "softplus", "one_minus_softplus")}


def get_link(name):
    try:
        return LINKS[name]
    except KeyError:
        raise DomainError(f"unknown link {name!r}; choose from {sorted(LINKS)}") from None


def default_links(family):
    """Identity for location, softplus for scale, 1 - softplus for tails."""
    if family.d == 1:
        return (LINKS["identity"],)
    names = ["identity", "softplus"] + ["one_minus_softplus"] * (family.d - 2)
    return tuple(LINKS[n] for n in names)


@dataclass(frozen=True)
class TailScaling:
    """Per-covariate affine map applied inside the tail index only.

    Columns are mapped onto [-0.5, 0.5] by (x - min)/(max - min) - 0.5;
    constant columns (the intercept) are left untouched.
    """

    scale: np.ndarray
    offset: np.ndarray

    @classmethod
    def from_data(cls, X):
        X = np.asarray(X, dtype=float)
        lo, hi = X.min(axis=0), X.max(axis=0)
        span = hi - lo
        const = span == 0.0
        scale = np.where(const, 1.0, 1.0 / np.where(const, 1.0, span))
        offset = np.where(const, 0.0, -lo * scale - 0.5)
        return cls(scale=scale, offset=offset)

    def apply(self, X):
        return np.asarray(X, dtype=float) * self.scale + self.offset

    def to_json(self):
        return {"scale": self.scale.tolist(), "offset": self.offset.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(
            scale=np.asarray(obj["scale"], dtype=float),
            offset=np.asarray(obj["offset"], dtype=float),
        )


@dataclass
class Dataset:
    """Responses y (n,) with covariate rows X (n, p); column 1 may be the intercept."""

    y: np.ndarray
    X: np.ndarray
    tail_scaling: TailScaling | None = None

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.y.ndim != 1:
            raise DataError("y must be a vector and X a matrix")
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(
                f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]} entries"
            )
        if self.y.size == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.X)):
            raise DataError("dataset contains non-finite entries")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def subset(self, idx):
        return Dataset(self.y[idx], self.X[idx], tail_scaling=self.tail_scaling)

    def tail_X(self):
        """Covariates as seen by the tail index block."""
        return self.X if self.tail_scaling is None else self.tail_scaling.apply(self.X)


def tail_block_index(family):
    """Block that receives tail-scaled covariates: the theta3 index, if present."""
    return 2 if family.d >= 3 else None


def design_matrices(X, tail_scaling=None):
    """(X, X_tail) pair; X_tail feeds the tail index block only."""
    X = np.asarray(X, dtype=float)
    return X, (X if tail_scaling is None else tail_scaling.apply(X))


@dataclass
class QirModel:
    """A quantile family whose indices are single-index functions of covariates."""

    family: QuantileFamily
    links: tuple
    beta: np.ndarray
    p: int
    tail_scaling: TailScaling | None = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if len(self.links) != self.family.d:
            raise DomainError(
                f"{self.family.name} needs {self.family.d} links, got {len(self.links)}"
            )
        if self.beta.size != self.family.d * self.p:
            raise DomainError(
                f"beta has length {self.beta.size}, expected d*p = {self.family.d * self.p}"
            )

    @property
    def d(self):
        return self.family.d

    @property
    def beta_blocks(self):
        return self.beta.reshape(self.d, self.p)

    def with_beta(self, beta):
        return replace(self, beta=np.asarray(beta, dtype=float).ravel())

    # -- evaluation ---------------------------------------------------------

    def linear_indices(self, X):
        """x' beta_j for every row and index; (n, d). Tail block sees scaled X."""
        X, X_tail = design_matrices(X, self.tail_scaling)
        B = self.beta_blocks
        Z = X @ B.T
        jt = tail_block_index(self.family)
        if jt is not None and self.tail_scaling is not None:
            Z[:, jt] = X_tail @ B[jt]
        if not np.all(np.isfinite(Z)):
            bad = int(np.argwhere(~np.isfinite(Z).all(axis=1))[0, 0])
            raise EvaluationError(f"non-finite linear index at row {bad}")
        return Z

    def index_matrix(self, X):
        """theta(x_i, beta) for every row; (n, d)."""
        Z = self.linear_indices(X)
        theta = np.column_stack([link(Z[:, j]) for j, link in enumerate(self.links)])
        return theta

    def indices(self, x):
        """Index vector theta(x, beta) for a single covariate row."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise DomainError(f"expected covariate vector of length {self.p}")
        return self.index_matrix(x[None, :])[0]

    def predict_quantile(self, x, tau):
        """Conditional tau-quantile at covariates x."""
        theta = self.indices(x)
        return float(self.family.quantile(float(tau), theta))

    def predict_curve(self, x, taus):
        """Conditional quantiles at several levels; nondecreasing for sorted taus."""
        theta = self.indices(x)
        taus = np.asarray(taus, dtype=float)
        return np.asarray(self.family.quantile(taus, theta))

    def quantile_grad_beta(self, x, tau):
        """Gradient of the conditional tau-quantile in beta; length d*p."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.p,):
            raise DomainError(f"expected covariate vector of length {self.p}")
        return self.grad_beta_matrix(x[None, :], float(tau))[0]

    def grad_beta_matrix(self, X, tau):
        """Rows are gradients d Q(tau, theta(x_i, beta)) / d beta; (n, d*p)."""
        X, X_tail = design_matrices(X, self.tail_scaling)
        Z = self.linear_indices(X)
        theta = np.column_stack([link(Z[:, j]) for j, link in enumerate(self.links)])
        dq = self.family.grad_theta(tau, theta)  # (n, d)
        jt = tail_block_index(self.family)
        out = np.empty((X.shape[0], self.d * self.p))
        for j, link in enumerate(self.links):
            w = dq[:, j] * link.deriv(Z[:, j])
            Xj = X_tail if j == jt else X
            out[:, j * self.p:(j + 1) * self.p] = Xj * w[:, None]
        return out

    # -- persistence --------------------------------------------------------

    def to_json(self):
        return {
            "family": self.family.name,
            "links": [link.name for link in self.links],
            "p": self.p,
            "d": self.d,
            "beta": [list(map(float, row)) for row in self.beta_blocks],
            "tail_scaling": None if self.tail_scaling is None else self.tail_scaling.to_json(),
        }

    @classmethod
    def from_json(cls, obj):
        family = get_family(obj["family"])
        links = tuple(get_link(name) for name in obj["links"])
        beta = np.asarray(obj["beta"], dtype=float)
        if beta.shape != (obj["d"], obj["p"]):
            raise DataError("beta blocks do not match the declared (d, p)")
        scaling = obj.get("tail_scaling")
        return cls(
            family=family,
            links=links,
            beta=beta.ravel(),
            p=int(obj["p"]),
            tail_scaling=None if scaling is None else TailScaling.from_json(scaling),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))
