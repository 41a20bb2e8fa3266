"""Data generation and the Monte Carlo experiment runners.

Samples follow Y_i = Q(U_i, theta(X_i, beta0)) with uniform U_i, an
intercept column, and standard normal covariates. Experiments replicate
fits across counter-derived seeds (replication r is identical no matter
the execution schedule), evaluate squared prediction errors at extreme
levels, and aggregate variable-selection quality for the penalized fits.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ExperimentError, QirError
from .families import TUKEY, get_family
from .loss import composite_loss
from .model import Dataset, QirModel, TailScaling, get_link
from .optim import FitConfig, PenaltySpec, fit_cqr, fit_regularized
from .tuning import quantile_grid

DEFAULT_LINK_NAMES = ("identity", "softplus", "one_minus_softplus")
ZERO_TOL = 1e-6


def default_beta0(p):
    """True coefficient blocks: (1, .5, -1), (1, .5, -1), (1, -1, 1), zero-padded."""
    if p < 3:
        raise ValueError("default coefficients need p >= 3")
    blocks = np.zeros((3, p))
    blocks[0, :3] = (1.0, 0.5, -1.0)
    blocks[1, :3] = (1.0, 0.5, -1.0)
    blocks[2, :3] = (1.0, -1.0, 1.0)
    return blocks


@dataclass
class SimScenario:
    """One data-generating configuration of the Tukey-lambda index model."""

    p: int = 3
    n: int = 500
    seed: int = 0
    tail_scaling: bool = False
    link_names: tuple = DEFAULT_LINK_NAMES
    beta0: np.ndarray | None = None

    def __post_init__(self):
        if self.beta0 is None:
            self.beta0 = default_beta0(self.p)
        self.beta0 = np.asarray(self.beta0, dtype=float).reshape(3, self.p)

    @property
    def links(self):
        return tuple(get_link(name) for name in self.link_names)


def generate_sample(scenario):
    """Draw a Dataset from the scenario; deterministic given its seed."""
    rng = np.random.default_rng(scenario.seed)
    n, p = scenario.n, scenario.p
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    scaling = TailScaling.from_data(X) if scenario.tail_scaling else None
    truth = QirModel(TUKEY, scenario.links, scenario.beta0.ravel(), p=p,
                     tail_scaling=scaling)
    theta = truth.index_matrix(X)
    U = rng.uniform(size=n)
    y = np.asarray(TUKEY.quantile(U, theta))
    if not np.all(np.isfinite(y)):
        raise ExperimentError("generated response contains non-finite values")
    return Dataset(y, X, tail_scaling=scaling)


def true_model(scenario, tail_scaling=None):
    """The generating model; pass the replication's transform when scaling is on."""
    return QirModel(TUKEY, scenario.links, scenario.beta0.ravel(), p=scenario.p,
                    tail_scaling=tail_scaling)


def true_quantile(scenario, x, tau, tail_scaling=None):
    """Conditional tau-quantile under the true coefficients."""
    return true_model(scenario, tail_scaling).predict_quantile(
        np.asarray(x, dtype=float), float(tau))


def pes(model, scenario, x, tau_star):
    """Squared gap between fitted and true conditional quantiles at (x, tau*)."""
    x = np.asarray(x, dtype=float)
    truth = true_quantile(scenario, x, tau_star, tail_scaling=model.tail_scaling)
    return (model.predict_quantile(x, float(tau_star)) - truth) ** 2


@dataclass
class SelectionMetrics:
    size: int
    hit_ai: bool
    hit_a: bool
    hit_i: bool
    fp_rate: float
    fn_rate: float


def selection_metrics(beta_hat, beta0, zero_tol=ZERO_TOL):
    """Support-recovery summary of a sparse fit against the truth."""
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    beta0 = np.asarray(beta0, dtype=float).ravel()
    if beta_hat.size != beta0.size:
        raise ValueError("coefficient vectors differ in length")
    active = np.abs(beta0) > 0.0
    selected = np.abs(beta_hat) > zero_tol
    n_active = int(active.sum())
    n_inactive = int((~active).sum())
    missed = int((active & ~selected).sum())
    spurious = int((~active & selected).sum())
    return SelectionMetrics(
        size=int(selected.sum()),
        hit_a=missed == 0,
        hit_i=spurious == 0,
        hit_ai=missed == 0 and spurious == 0,
        fp_rate=100.0 * spurious / n_inactive if n_inactive else 0.0,
        fn_rate=100.0 * missed / n_active if n_active else 0.0,
    )


def replication_seed(master_seed, *key):
    """Counter-derived child seed: identical regardless of execution order."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _default_targets(p):
    x_a = np.zeros(p); x_a[0] = 1.0
    x_b = np.zeros(p); x_b[:3] = (1.0, 0.1, -0.2)
    return (
        ("x=(1 0 0)", x_a, 0.991), ("x=(1 0 0)", x_a, 0.995),
        ("x=(1 0.1 -0.2)", x_b, 0.991), ("x=(1 0.1 -0.2)", x_b, 0.995),
    )


# ---------------------------------------------------------------------------
# low-dimensional consistency experiment
# ---------------------------------------------------------------------------

@dataclass
class LowDimConfig:
    ns: tuple = (500, 1000, 2000)
    p: int = 3
    tau_l: float = 0.5
    tau_u: float = 0.99
    K: int = 10
    replications: int = 100
    seed: int = 20240
    tail_scaling: bool = True
    random_restarts: int = 2
    max_iter: int = 10000
    threads: int = 1


def _fit_with_restarts(family, links, data, grid, config, restarts, seed):
    """Best-loss fit over the zero start plus `restarts` random starts."""
    best = fit_cqr(family, links, data, grid, config)
    for r in range(restarts):
        cfg = replace(config, init=("random", 1.0, replication_seed(seed, 977, r)))
        try:
            cand = fit_cqr(family, links, data, grid, cfg)
        except QirError:
            continue
        if cand.final_loss < best.final_loss:
            best = cand
    return best


def _lowdim_one(args):
    config, n, rep = args
    seed = replication_seed(config.seed, n, rep)
    scenario = SimScenario(p=config.p, n=n, seed=seed, tail_scaling=config.tail_scaling)
    data = generate_sample(scenario)
    grid = quantile_grid(config.tau_l, config.tau_u, config.K)
    fit_cfg = FitConfig(max_iter=config.max_iter)
    try:
        res = _fit_with_restarts(TUKEY, scenario.links, data, grid, fit_cfg,
                                 config.random_restarts, seed)
    except QirError as exc:
        return {"n": n, "rep": rep, "seed": seed, "ok": False, "error": str(exc)}
    model = QirModel(TUKEY, scenario.links, res.beta_hat, p=config.p,
                     tail_scaling=data.tail_scaling)
    record = {
        "n": n, "rep": rep, "seed": seed, "ok": True,
        "converged": res.converged, "n_iter": res.n_iter,
        "beta_hat": res.beta_hat.tolist(),
    }
    for name, x, tau in _default_targets(config.p):
        record[f"pes@{name}@{tau}"] = pes(model, scenario, x, tau)
        record[f"true@{name}@{tau}"] = true_quantile(scenario, x, tau,
                                                     tail_scaling=data.tail_scaling)
    return record


@dataclass
class ExperimentReport:
    """Per-replication records plus aggregate rows derived from them."""

    records: list
    aggregates: list
    config: object = field(repr=False, default=None)

    def failures(self):
        return [r for r in self.records if not r.get("ok", False)]


def _run_parallel(worker, jobs, threads):
    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, jobs, chunksize=1))
    return [worker(job) for job in jobs]


def _check_failures(records, context):
    bad = [r for r in records if not r.get("ok", False)]
    if len(bad) > 0.2 * len(records):
        raise ExperimentError(
            f"{len(bad)}/{len(records)} replications failed in {context}: "
            f"{bad[0].get('error', '?')}"
        )
    return [r for r in records if r.get("ok", False)]


def run_lowdim_experiment(config, out_dir=None):
    """PES consistency study across sample sizes (Monte Carlo, desk scale)."""
    jobs = [(config, n, rep) for n in config.ns for rep in range(config.replications)]
    records = _run_parallel(_lowdim_one, jobs, config.threads)
    good = _check_failures(records, "low-dim experiment")
    targets = _default_targets(config.p)
    aggregates = []
    for n in config.ns:
        sub = [r for r in good if r["n"] == n]
        row = {"n": n, "replications": len(sub)}
        for name, _x, tau in targets:
            vals = np.array([r[f"pes@{name}@{tau}"] for r in sub])
            row[f"mse@{name}@{tau}"] = float(vals.mean())
            row[f"sd@{name}@{tau}"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        aggregates.append(row)
    report = ExperimentReport(records=records, aggregates=aggregates, config=config)
    if out_dir is not None:
        _write_lowdim(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# high-dimensional regularized experiment
# ---------------------------------------------------------------------------

@dataclass
class HighDimConfig:
    p: int = 50
    cs: tuple = (10, 30, 50)
    s: int = 9
    tau_l: float = 0.5
    tau_u: float = 0.99
    K: int = 10
    replications: int = 50
    seed: int = 31337
    tail_scaling: bool = True
    # includes the slow-descent region around 0.16 where the warm-started
    # path works its way from the all-zero plateau into the sparse basin
    lambdas: tuple = (0.4, 0.25, 0.16, 0.1, 0.063, 0.04, 0.025, 0.016)
    validation_factor: int = 5
    penalty_kind: str = "scad"
    penalty_shape: float = 3.7
    max_iter: int = 6000
    threads: int = 1
    zero_tol: float = ZERO_TOL


def sample_size_for(c, s, p):
    return int(np.floor(c * s * np.log(p)))


def _highdim_one(args):
    config, c, rep = args
    n = sample_size_for(c, config.s, config.p)
    seed = replication_seed(config.seed, c, rep)
    scenario = SimScenario(p=config.p, n=n, seed=seed,
                           tail_scaling=config.tail_scaling)
    data = generate_sample(scenario)
    val_scenario = replace(scenario, n=config.validation_factor * n,
                           seed=replication_seed(config.seed, c, rep, 555))
    val_data = generate_sample(val_scenario)
    grid = quantile_grid(config.tau_l, config.tau_u, config.K)
    lambdas = tuple(sorted(config.lambdas, reverse=True))
    fit_cfg = FitConfig(max_iter=config.max_iter)
    beta0 = scenario.beta0.ravel()
    try:
        best = None
        warm = None
        for lam in lambdas:
            cfg = replace(fit_cfg, init=warm if warm is not None else "zeros")
            spec = PenaltySpec(kind=config.penalty_kind, lam=lam,
                               a=config.penalty_shape, gamma=config.penalty_shape)
            res = fit_regularized(TUKEY, scenario.links, data, grid, spec, cfg)
            warm = res.beta_hat
            model = QirModel(TUKEY, scenario.links, res.beta_hat, p=config.p,
                             tail_scaling=data.tail_scaling)
            val_loss = composite_loss(model, val_data, grid) / (val_data.n * grid.K)
            if best is None or val_loss < best[0]:
                best = (val_loss, lam, res)
    except QirError as exc:
        return {"c": c, "rep": rep, "seed": seed, "ok": False, "error": str(exc)}
    val_loss, lam, res = best
    model = QirModel(TUKEY, scenario.links, res.beta_hat, p=config.p,
                     tail_scaling=data.tail_scaling)
    err = float(np.linalg.norm(res.beta_hat - beta0))
    metrics = selection_metrics(res.beta_hat, beta0, config.zero_tol)
    record = {
        "c": c, "n": n, "rep": rep, "seed": seed, "ok": True,
        "lambda": lam, "val_loss": val_loss, "error_norm": err,
        "rate": float(np.sqrt(config.s * np.log(config.p) / n)),
        "size": metrics.size, "hit_ai": metrics.hit_ai, "hit_a": metrics.hit_a,
        "hit_i": metrics.hit_i, "fp": metrics.fp_rate, "fn": metrics.fn_rate,
        "converged": res.converged, "n_iter": res.n_iter,
    }
    for name, x, tau in _default_targets(config.p):
        record[f"pes@{name}@{tau}"] = pes(model, scenario, x, tau)
    return record


def run_highdim_experiment(config, out_dir=None):
    """Penalized estimation study: error scaling and support recovery."""
    jobs = [(config, c, rep) for c in config.cs for rep in range(config.replications)]
    records = _run_parallel(_highdim_one, jobs, config.threads)
    good = _check_failures(records, "high-dim experiment")
    aggregates = []
    for c in config.cs:
        sub = [r for r in good if r["c"] == c]
        err = np.array([r["error_norm"] for r in sub])
        rate = sub[0]["rate"] if sub else np.nan
        row = {
            "c": c, "n": sub[0]["n"] if sub else 0, "replications": len(sub),
            "median_error": float(np.median(err)), "mean_error": float(err.mean()),
            "rate": rate, "ratio": float(np.median(err) / rate),
            "size": float(np.mean([r["size"] for r in sub])),
            "p_ai": 100.0 * float(np.mean([r["hit_ai"] for r in sub])),
            "p_a": 100.0 * float(np.mean([r["hit_a"] for r in sub])),
            "p_i": 100.0 * float(np.mean([r["hit_i"] for r in sub])),
            "fp": float(np.mean([r["fp"] for r in sub])),
            "fn": float(np.mean([r["fn"] for r in sub])),
        }
        for name, _x, tau in _default_targets(config.p):
            vals = np.array([r[f"pes@{name}@{tau}"] for r in sub])
            row[f"mse@{name}@{tau}"] = float(vals.mean())
        aggregates.append(row)
    report = ExperimentReport(records=records, aggregates=aggregates, config=config)
    if out_dir is not None:
        _write_highdim(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# coverage experiment for the delta-method intervals
# ---------------------------------------------------------------------------

@dataclass
class CoverageConfig:
    n: int = 2000
    p: int = 3
    tau_l: float = 0.5
    tau_u: float = 0.99
    K: int = 10
    tau_star: float = 0.991
    level: float = 0.95
    replications: int = 200
    seed: int = 90210
    tail_scaling: bool = True
    random_restarts: int = 2
    max_iter: int = 10000
    threads: int = 1


def _coverage_one(args):
    from .inference import estimate_sandwich, predict_quantile_ci

    config, rep = args
    seed = replication_seed(config.seed, rep)
    scenario = SimScenario(p=config.p, n=config.n, seed=seed,
                           tail_scaling=config.tail_scaling)
    data = generate_sample(scenario)
    grid = quantile_grid(config.tau_l, config.tau_u, config.K)
    x = np.zeros(config.p); x[0] = 1.0
    try:
        res = _fit_with_restarts(TUKEY, scenario.links, data, grid,
                                 FitConfig(max_iter=config.max_iter),
                                 config.random_restarts, seed)
        model = QirModel(TUKEY, scenario.links, res.beta_hat, p=config.p,
                         tail_scaling=data.tail_scaling)
        cov = estimate_sandwich(model, data, grid)
        lo, hi = predict_quantile_ci(model, cov, data, x, config.tau_star, config.level)
    except QirError as exc:
        return {"rep": rep, "seed": seed, "ok": False, "error": str(exc)}
    truth = true_quantile(scenario, x, config.tau_star, tail_scaling=data.tail_scaling)
    return {
        "rep": rep, "seed": seed, "ok": True, "lo": lo, "hi": hi,
        "truth": truth, "covered": bool(lo <= truth <= hi),
        "width": hi - lo,
        "beta_hat": res.beta_hat.tolist(),
        "sandwich_diag": np.diag(cov.sandwich).tolist(),
    }


def run_coverage_experiment(config, out_dir=None):
    """Empirical coverage of the delta-method prediction intervals."""
    jobs = [(config, rep) for rep in range(config.replications)]
    records = _run_parallel(_coverage_one, jobs, config.threads)
    good = _check_failures(records, "coverage experiment")
    coverage = float(np.mean([r["covered"] for r in good]))
    aggregates = [{
        "n": config.n, "tau_star": config.tau_star, "level": config.level,
        "replications": len(good), "coverage": coverage,
        "mean_width": float(np.mean([r["width"] for r in good])),
    }]
    report = ExperimentReport(records=records, aggregates=aggregates, config=config)
    if out_dir is not None:
        _write_coverage(report, out_dir)
    return report


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _write_dsv(path, rows, columns, sep=","):
    lines = [sep.join(columns)]
    for row in rows:
        cells = []
        for col in columns:
            v = row.get(col, "")
            if isinstance(v, float):
                cells.append(repr(float(v)))  # plain-float repr round-trips exactly
            elif isinstance(v, (list, tuple, np.ndarray)):
                cells.append(";".join(repr(float(u)) for u in v))
            else:
                cells.append(str(v))
        lines.append(sep.join(cells))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _record_columns(records):
    cols = []
    for r in records:
        for k in r:
            if k not in cols:
                cols.append(k)
    return cols


def _write_lowdim(report, out_dir):
    import os
    os.makedirs(out_dir, exist_ok=True)
    _write_dsv(os.path.join(out_dir, "lowdim_records.csv"), report.records,
               _record_columns(report.records))
    _write_dsv(os.path.join(out_dir, "lowdim_table.csv"), report.aggregates,
               _record_columns(report.aggregates))
    targets = _default_targets(report.config.p)
    truth_row = [{
        "target": name, "tau_star": tau,
        "true_quantile": true_quantile(SimScenario(p=report.config.p), x, tau),
    } for name, x, tau in targets]
    _write_dsv(os.path.join(out_dir, "lowdim_true.csv"), truth_row,
               ["target", "tau_star", "true_quantile"])


def _write_highdim(report, out_dir):
    import os
    os.makedirs(out_dir, exist_ok=True)
    _write_dsv(os.path.join(out_dir, "highdim_records.csv"), report.records,
               _record_columns(report.records))
    _write_dsv(os.path.join(out_dir, "highdim_table.csv"), report.aggregates,
               _record_columns(report.aggregates))
    scaling_rows = [
        {"c": row["c"], "n": row["n"], "error_norm": row["median_error"],
         "sqrt_rate": row["rate"]}
        for row in report.aggregates
    ]
    _write_dsv(os.path.join(out_dir, "highdim_scaling.csv"), scaling_rows,
               ["c", "n", "error_norm", "sqrt_rate"])


def _write_coverage(report, out_dir):
    import os
    os.makedirs(out_dir, exist_ok=True)
    _write_dsv(os.path.join(out_dir, "coverage_records.csv"), report.records,
               _record_columns(report.records))
    _write_dsv(os.path.join(out_dir, "coverage_summary.csv"), report.aggregates,
               _record_columns(report.aggregates))


CONFIG_TYPES = {
    "lowdim": LowDimConfig,
    "highdim": HighDimConfig,
    "coverage": CoverageConfig,
}


def load_experiment_config(path):
    """Read a JSON scenario file: {"kind": "lowdim"|"highdim"|"coverage", ...}."""
    with open(path) as fh:
        obj = json.load(fh)
    kind = obj.pop("kind", None)
    if kind not in CONFIG_TYPES:
        raise ExperimentError(f"config must declare kind in {sorted(CONFIG_TYPES)}")
    cls = CONFIG_TYPES[kind]
    for key in ("ns", "cs", "lambdas"):
        if key in obj:
            obj[key] = tuple(obj[key])
    try:
        return kind, cls(**obj)
    except TypeError as exc:
        raise ExperimentError(f"bad {kind} config: {exc}") from None


def run_experiment(kind, config, out_dir=None):
    runner = {
        "lowdim": run_lowdim_experiment,
        "highdim": run_highdim_experiment,
        "coverage": run_coverage_experiment,
    }[kind]
    return runner(config, out_dir=out_dir)
