"""Acceptance suite: one test per criterion, printed as PASS/FAIL lines.

Criteria 5-8 run the full desk-scale Monte Carlo experiments (about an
hour on two cores) and are marked slow; `pytest -m "not slow"` skips
them. Each experiment writes its report files into a session directory
so the determinism criterion can compare bytes across reruns.
"""

import numpy as np
import pytest

from qir.families import GAUSSIAN, GLAMBDA, TUKEY, distinct_at_levels
from qir.loss import check_loss, check_psi
from qir.model import Dataset, QirModel, default_links
from qir.optim import FitConfig, PenaltySpec, fit_cqr, penalty_value, scad_prox
from qir.sim import (
    CoverageConfig,
    HighDimConfig,
    LowDimConfig,
    run_coverage_experiment,
    run_highdim_experiment,
    run_lowdim_experiment,
)
from qir.tuning import quantile_grid

from conftest import BETA0, make_dataset

X_A = np.array([1.0, 0.0, 0.0])
X_B = np.array([1.0, 0.1, -0.2])

LOWDIM_CONFIG = LowDimConfig(threads=2)          # ns (500,1000,2000) x 100 reps
HIGHDIM_CONFIG = HighDimConfig(threads=2)        # cs (10,30,50) x 50 reps
COVERAGE_CONFIG = CoverageConfig(threads=2)      # n=2000 x 200 reps


def report(criterion, ok, detail):
    print(f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


# -- deterministic criteria ----------------------------------------------------

def test_criterion_1_true_quantile_reproduction(table1_model):
    cases = [(X_B, 0.991, 10.34), (X_B, 0.995, 11.83),
             (X_A, 0.991, 15.13), (X_A, 0.995, 18.84)]
    got = [table1_model.predict_quantile(x, tau) for x, tau, _ in cases]
    ok = all(abs(g - want) <= 0.01 for g, (_, _, want) in zip(got, cases))
    assert report(1, ok, "true quantiles " + ", ".join(f"{g:.4f}" for g in got))


def central_diff_richardson(f, h):
    """Richardson-extrapolated central difference: cancels the h^2 term."""
    d1 = (f(h) - f(-h)) / (2 * h)
    d2 = (f(h / 2) - f(-h / 2)) / h
    return (4.0 * d2 - d1) / 3.0


def test_criterion_2_gradient_suite():
    rng = np.random.default_rng(20240802)
    worst_theta = 0.0
    for family in (TUKEY, GLAMBDA, GAUSSIAN):
        for _ in range(1000):
            theta = np.zeros(family.d)
            theta[0] = rng.normal(scale=2.0)
            if family.d > 1:
                theta[1] = np.exp(rng.normal(scale=0.7))
            for j in range(2, family.d):
                t = rng.normal(scale=0.5)
                while abs(t) < 1e-3 or (family is TUKEY and t > 0.999):
                    t = rng.normal(scale=0.5)
                theta[j] = t
            tau = rng.uniform(0.03, 0.97)
            g = family.grad_theta(tau, theta)
            for j in range(family.d):
                e = np.zeros(family.d); e[j] = 1.0

                def shifted(h, e=e):
                    return family.quantile(tau, theta + h * e)

                fd = central_diff_richardson(shifted, 1e-4)
                rel = abs(g[j] - fd) / (abs(fd) + abs(g[j]) + 1e-10)
                worst_theta = max(worst_theta, rel)
    links = default_links(TUKEY)
    worst_beta = 0.0
    for _ in range(1000):
        beta = rng.normal(scale=0.7, size=9)
        model = QirModel(TUKEY, links, beta, p=3)
        x = np.array([1.0, *rng.normal(size=2)])
        tau = rng.uniform(0.05, 0.95)
        g = model.quantile_grad_beta(x, tau)
        for j in range(9):
            e = np.zeros(9); e[j] = 1.0

            def shifted(h, e=e):
                return model.with_beta(beta + h * e).predict_quantile(x, tau)

            fd = central_diff_richardson(shifted, 1e-4)
            rel = abs(g[j] - fd) / (abs(fd) + abs(g[j]) + 1e-9)
            worst_beta = max(worst_beta, rel)
    ok = worst_theta < 1e-6 and worst_beta < 1e-6
    assert report(2, ok, f"max rel err theta {worst_theta:.2e}, beta {worst_beta:.2e}")


def test_criterion_3_prox_oracle():
    assert scad_prox(0.5, 1.0, 1.0, 0.0) == 0.0
    assert scad_prox(5.0, 1.0, 1.0, 0.0, 3.7) == 5.0
    assert abs(scad_prox(3.0, 1.0, 1.0, 0.0, 3.7) - 2.58824) < 1e-5
    rng = np.random.default_rng(555)
    worst = 0.0
    for _ in range(1000):
        lam = rng.uniform(0.05, 1.5)
        eta = rng.uniform(0.05, 1.0)
        a = rng.uniform(2.5, 5.0)
        mu = 0.0 if rng.uniform() < 0.5 else 1.0 / (a - 1.0)
        z = rng.uniform(-1.5, 1.5) * (a * lam + 0.5)
        got = scad_prox(z, lam, eta, mu, a)
        spec = PenaltySpec(kind="scad", lam=lam, a=a)
        v = (1.0 + mu * eta) * z
        span = max(a * lam, abs(z)) + 1.0
        xs = np.arange(-span, span + 1e-4, 1e-4)
        obj = 0.5 * (xs - v) ** 2 + eta * (penalty_value(spec, xs) + 0.5 * mu * xs**2)
        worst = max(worst, abs(got - xs[np.argmin(obj)]))
    ok = worst < 2e-4
    assert report(3, ok, f"worked values exact, max grid gap {worst:.2e}")


def test_criterion_4_non_crossing():
    rng = np.random.default_rng(90)
    taus = np.linspace(0.01, 0.99, 200)
    links = default_links(TUKEY)
    grid = quantile_grid(0.5, 0.95, 5)
    checked = 0
    for i in range(400):  # random coefficient models
        model = QirModel(TUKEY, links, rng.normal(scale=0.8, size=9), p=3)
        x = np.array([1.0, *rng.normal(size=2)])
        curve = model.predict_curve(x, taus)
        assert np.all(np.diff(curve) >= -1e-10)
        checked += 1
    for i in range(100):  # fitted models
        data = make_dataset(80, seed=1000 + i)
        res = fit_cqr(TUKEY, links, data, grid, FitConfig(max_iter=150))
        model = QirModel(TUKEY, links, res.beta_hat, p=3)
        x = np.array([1.0, *rng.normal(size=2)])
        curve = model.predict_curve(x, taus)
        assert np.all(np.diff(curve) >= -1e-10)
        checked += 1
    assert report(4, checked == 500, f"{checked} quantile curves nondecreasing")


def test_criterion_9_identification_and_knight():
    rng = np.random.default_rng(424242)
    levels = [0.55, 0.75, 0.95]
    all_distinct = True
    for _ in range(1000):
        a = np.array([rng.normal(scale=2), np.exp(rng.normal(scale=0.7)),
                      min(0.999, rng.normal(scale=0.6))])
        b = np.array([rng.normal(scale=2), np.exp(rng.normal(scale=0.7)),
                      min(0.999, rng.normal(scale=0.6))])
        if np.allclose(a, b):
            continue
        all_distinct &= distinct_at_levels(TUKEY, levels, a, b)
    worst = 0.0
    for _ in range(1000):
        tau = rng.uniform(0.01, 0.99)
        u = rng.uniform(-10, 10)
        while abs(u) < 1e-8:
            u = rng.uniform(-10, 10)
        v = rng.uniform(-10, 10)
        lhs = float(check_loss(tau, u - v) - check_loss(tau, u))
        rhs = -v * float(check_psi(tau, u)) + (u - v) * ((0 > u > v) - (0 < u < v))
        worst = max(worst, abs(lhs - rhs))
    ok = all_distinct and worst < 1e-12
    assert report(9, ok, f"1000 theta pairs separated; Knight gap {worst:.2e}")


# -- Monte Carlo criteria (slow) -------------------------------------------------

@pytest.fixture(scope="session")
def outdirs(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance_reports")


@pytest.fixture(scope="session")
def lowdim_report(outdirs):
    return run_lowdim_experiment(LOWDIM_CONFIG, out_dir=outdirs / "lowdim")


@pytest.fixture(scope="session")
def highdim_report(outdirs):
    return run_highdim_experiment(HIGHDIM_CONFIG, out_dir=outdirs / "highdim")


@pytest.fixture(scope="session")
def coverage_report(outdirs):
    return run_coverage_experiment(COVERAGE_CONFIG, out_dir=outdirs / "coverage")


KEY = "mse@x=(1 0 0)@0.991"


@pytest.mark.slow
def test_criterion_5_lowdim_consistency_trend(lowdim_report):
    by_n = {row["n"]: row[KEY] for row in lowdim_report.aggregates}
    means = [by_n[n] for n in (500, 1000, 2000)]
    decreasing = means[0] > means[1] > means[2]
    in_band = 0.3 <= means[2] <= 3.5
    ok = decreasing and in_band
    assert report(5, ok, "mean PES @ tau*=0.991: "
                  + " > ".join(f"{m:.3f}" for m in means)
                  + f"; n=2000 in [0.3, 3.5]: {in_band}")


@pytest.mark.slow
def test_criterion_6_highdim_error_scaling(highdim_report):
    rows = {row["c"]: row for row in highdim_report.aggregates}
    medians = [rows[c]["median_error"] for c in (10, 30, 50)]
    ratios = [rows[c]["ratio"] for c in (10, 30, 50)]
    decreasing = medians[0] > medians[1] > medians[2]
    spread = max(ratios) / min(ratios)
    ok = decreasing and spread < 3.0
    assert report(6, ok, "median |beta - beta0|: "
                  + " > ".join(f"{m:.3f}" for m in medians)
                  + f"; ratio spread x{spread:.2f} (< 3)")


@pytest.mark.slow
def test_criterion_7_variable_selection(highdim_report):
    """Table-3 selection bands at c=50.

    Known-red criterion: the generation-side stabilizing transform the
    source study describes shrinks the tail-block design columns to
    sd ~ 0.15, putting the two +-1 tail slopes below the detection
    boundary at n=1760 (se ~ 0.5-1), while the unstabilized process
    produces single rows with |y| ~ 1e8 that wreck validation-based
    lambda selection. No reading of the generation protocol we could
    construct satisfies these bands simultaneously with the published
    prediction-error magnitudes; see the decisions ledger for the full
    analysis. The test asserts the bands exactly as stated.
    """
    row = {r["c"]: r for r in highdim_report.aggregates}[50]
    ok = (8.8 <= row["size"] <= 9.2 and row["p_ai"] >= 95.0
          and row["fp"] <= 0.5 and row["fn"] <= 1.0)
    assert report(7, ok, f"size {row['size']:.2f} (want [8.8, 9.2]), "
                  f"P_AI {row['p_ai']:.1f}% (>= 95), FP {row['fp']:.2f} (<= 0.5), "
                  f"FN {row['fn']:.2f} (<= 1.0)")


@pytest.mark.slow
def test_criterion_8_interval_coverage(coverage_report):
    agg = coverage_report.aggregates[0]
    cov = agg["coverage"]
    ok = 0.88 <= cov <= 0.99
    assert report(8, ok, f"95% intervals covered {100 * cov:.1f}% "
                  f"(want [88, 99]), mean width {agg['mean_width']:.2f}")


@pytest.mark.slow
def test_theorem3_sandwich_tracks_empirical_covariance(coverage_report):
    # location-block variances: empirical covariance of sqrt(n)(beta-beta0)
    # against the replication-averaged sandwich, within a factor of two
    good = [r for r in coverage_report.records if r.get("ok")]
    betas = np.array([r["beta_hat"] for r in good])
    sand = np.array([r["sandwich_diag"] for r in good])
    n = COVERAGE_CONFIG.n
    emp = n * np.var(betas[:, :3], axis=0, ddof=1)
    avg = sand[:, :3].mean(axis=0)
    ratios = avg / emp
    assert np.all(ratios > 0.5) and np.all(ratios < 2.0), ratios


@pytest.mark.slow
def test_criterion_10_determinism(tmp_path):
    from dataclasses import replace

    pairs = []
    small_low = replace(LOWDIM_CONFIG, ns=(500,), replications=3, threads=1)
    small_high = replace(HIGHDIM_CONFIG, cs=(10,), replications=2, threads=1,
                         max_iter=2000)
    small_cov = replace(COVERAGE_CONFIG, n=500, replications=3, threads=1)
    for tag, runner, config, files in (
        ("lowdim", run_lowdim_experiment, small_low,
         ("lowdim_records.csv", "lowdim_table.csv", "lowdim_true.csv")),
        ("highdim", run_highdim_experiment, small_high,
         ("highdim_records.csv", "highdim_table.csv", "highdim_scaling.csv")),
        ("coverage", run_coverage_experiment, small_cov,
         ("coverage_records.csv", "coverage_summary.csv")),
    ):
        runner(config, out_dir=tmp_path / f"{tag}_a")
        runner(config, out_dir=tmp_path / f"{tag}_b")
        for name in files:
            a = (tmp_path / f"{tag}_a" / name).read_bytes()
            b = (tmp_path / f"{tag}_b" / name).read_bytes()
            pairs.append((f"{tag}/{name}", a == b))

    # replication records are counter-seeded: totals don't change prefixes
    wider = replace(small_low, replications=5)
    r3 = run_lowdim_experiment(small_low)
    r5 = run_lowdim_experiment(wider)
    prefix_ok = all(r3.records[i] == r5.records[i] for i in range(3))

    ok = all(same for _, same in pairs) and prefix_ok
    assert report(10, ok, f"{len(pairs)} report files byte-identical on rerun; "
                  f"records prefix-stable: {prefix_ok}")
