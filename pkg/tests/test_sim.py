import numpy as np
import pytest

from qir.errors import ExperimentError
from qir.families import TUKEY
from qir.model import QirModel, default_links
from qir.sim import (
    CoverageConfig,
    HighDimConfig,
    LowDimConfig,
    SimScenario,
    default_beta0,
    generate_sample,
    load_experiment_config,
    pes,
    replication_seed,
    run_lowdim_experiment,
    sample_size_for,
    selection_metrics,
    true_quantile,
)

X_A3 = np.array([1.0, 0.0, 0.0])


def test_default_beta0_padding():
    blocks = default_beta0(6)
    assert blocks.shape == (3, 6)
    assert blocks[0].tolist() == [1.0, 0.5, -1.0, 0.0, 0.0, 0.0]
    assert blocks[2].tolist() == [1.0, -1.0, 1.0, 0.0, 0.0, 0.0]


def test_generate_sample_deterministic():
    sc = SimScenario(p=3, n=200, seed=99)
    a = generate_sample(sc)
    b = generate_sample(sc)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.X, b.X)
    c = generate_sample(SimScenario(p=3, n=200, seed=100))
    assert not np.array_equal(a.y, c.y)


def test_generate_sample_shapes_and_intercept():
    data = generate_sample(SimScenario(p=5, n=64, seed=1))
    assert data.X.shape == (64, 5)
    assert np.all(data.X[:, 0] == 1.0)


def test_marginal_quantiles_match_true_quantile():
    # frozen covariate row: all rows identical, so Y is an iid draw from
    # the row's conditional law; empirical quantiles must match the curve
    sc = SimScenario(p=3, n=100_000, seed=5)
    rng = np.random.default_rng(5)
    truth = QirModel(TUKEY, sc.links, sc.beta0.ravel(), p=3)
    theta = truth.indices(X_A3)
    U = rng.uniform(size=sc.n)
    y = np.asarray(TUKEY.quantile(U, np.broadcast_to(theta, (sc.n, 3))))
    q_hat = np.quantile(y, 0.991)
    assert q_hat == pytest.approx(15.13, abs=0.15)
    for tau in (0.9, 0.99):
        cdf = np.mean(y <= true_quantile(sc, X_A3, tau))
        assert abs(cdf - tau) <= 3.0 * np.sqrt(tau * (1 - tau) / sc.n)


def test_pes_values(table1_model):
    sc = SimScenario(p=3, n=10, seed=0)
    assert pes(table1_model, sc, X_A3, 0.991) == pytest.approx(0.0, abs=1e-20)
    shifted = table1_model.with_beta(table1_model.beta.copy())
    truth = true_quantile(sc, X_A3, 0.991)

    class Bumped:
        tail_scaling = None

        def predict_quantile(self, x, tau):
            return truth + 2.0

    assert pes(Bumped(), sc, X_A3, 0.991) == pytest.approx(4.0)


def test_selection_metrics_cases():
    beta0 = default_beta0(50).ravel()
    exact = np.where(np.abs(beta0) > 0, beta0, 0.0)
    m = selection_metrics(exact, beta0)
    assert m.size == 9 and m.hit_ai and m.hit_a and m.hit_i
    assert m.fp_rate == 0.0 and m.fn_rate == 0.0

    missed = exact.copy()
    active_idx = np.flatnonzero(np.abs(beta0) > 0)
    missed[active_idx[0]] = 0.0
    m2 = selection_metrics(missed, beta0)
    assert m2.size == 8 and not m2.hit_a and m2.hit_i and not m2.hit_ai
    assert m2.fn_rate == pytest.approx(100.0 / 9.0)
    assert m2.fp_rate == 0.0

    spurious = exact.copy()
    inactive_idx = np.flatnonzero(np.abs(beta0) == 0)
    spurious[inactive_idx[:3]] = 1e-3
    m3 = selection_metrics(spurious, beta0)
    assert m3.size == 12 and m3.hit_a and not m3.hit_i
    assert m3.fp_rate == pytest.approx(300.0 / 141.0)


def test_selection_zero_tol():
    beta0 = np.array([1.0, 0.0])
    m = selection_metrics(np.array([1.0, 1e-9]), beta0)
    assert m.size == 1 and m.hit_i


def test_replication_seed_is_schedule_independent():
    a = replication_seed(123, 5, 7)
    b = replication_seed(123, 5, 7)
    assert a == b
    assert replication_seed(123, 5, 8) != a
    assert replication_seed(124, 5, 7) != a


def test_sample_size_for_matches_floor_rule():
    assert sample_size_for(10, 9, 50) == int(np.floor(10 * 9 * np.log(50)))


def test_lowdim_single_replication_report(tmp_path):
    cfg = LowDimConfig(ns=(300,), replications=1, seed=4, threads=1,
                       random_restarts=0, max_iter=600)
    report = run_lowdim_experiment(cfg, out_dir=tmp_path)
    assert len(report.records) == 1
    rec = report.records[0]
    agg = report.aggregates[0]
    assert agg["replications"] == 1
    key = "pes@x=(1 0 0)@0.991"
    assert agg["mse@x=(1 0 0)@0.991"] == rec[key]  # aggregate equals the record
    assert (tmp_path / "lowdim_records.csv").exists()
    assert (tmp_path / "lowdim_table.csv").exists()
    true_table = (tmp_path / "lowdim_true.csv").read_text()
    assert "15.13" in true_table and "18.84" in true_table


def test_lowdim_report_files_bitwise_reproducible(tmp_path):
    cfg = LowDimConfig(ns=(250,), replications=2, seed=11, threads=1,
                       random_restarts=0, max_iter=400)
    run_lowdim_experiment(cfg, out_dir=tmp_path / "a")
    run_lowdim_experiment(cfg, out_dir=tmp_path / "b")
    for name in ("lowdim_records.csv", "lowdim_table.csv", "lowdim_true.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_experiment_error_on_mass_failure(monkeypatch, tmp_path):
    import qir.sim as sim

    def boom(args):
        return {"n": args[1], "rep": args[2], "ok": False, "error": "synthetic"}

    monkeypatch.setattr(sim, "_lowdim_one", boom)
    cfg = LowDimConfig(ns=(100,), replications=4, seed=0, threads=1)
    with pytest.raises(ExperimentError):
        run_lowdim_experiment(cfg)


def test_load_experiment_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"kind": "lowdim", "ns": [100, 200], "replications": 3, "seed": 9}')
    kind, cfg = load_experiment_config(path)
    assert kind == "lowdim" and cfg.ns == (100, 200) and cfg.replications == 3
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "mystery"}')
    with pytest.raises(ExperimentError):
        load_experiment_config(bad)
    extra = tmp_path / "extra.json"
    extra.write_text('{"kind": "coverage", "bogus_field": 1}')
    with pytest.raises(ExperimentError):
        load_experiment_config(extra)
