import numpy as np
import pytest

from qir.errors import DomainError, QirError, TuningError
from qir.families import TUKEY
from qir.model import Dataset, QirModel, default_links
from qir.tuning import (
    TuneSpec,
    cross_validate,
    fold_assignments,
    prediction_error,
    quantile_grid,
    rescale_lambda,
)

from conftest import make_dataset


# -- quantile grid ------------------------------------------------------------

def test_grid_matches_closed_form():
    grid = quantile_grid(0.5, 0.99, 10)
    k = np.arange(1, 11)
    assert np.max(np.abs(grid.taus - (0.5 + k * 0.49 / 11))) < 1e-15
    assert grid.taus[0] == pytest.approx(0.544545454545, abs=1e-10)


def test_grid_single_level_is_midpoint():
    grid = quantile_grid(0.6, 0.8, 1)
    assert grid.taus == pytest.approx([0.7])


def test_grid_strictly_increasing_inside_range():
    grid = quantile_grid(0.9, 0.99, 25)
    assert np.all(np.diff(grid.taus) > 0)
    assert grid.taus[0] > 0.9 and grid.taus[-1] < 0.99


def test_grid_validation():
    with pytest.raises(DomainError):
        quantile_grid(0.9, 0.5, 10)
    with pytest.raises(DomainError):
        quantile_grid(0.5, 0.99, 0)


# -- prediction error -----------------------------------------------------------

def test_pe_zero_when_coverage_exact():
    n = 200
    y = np.arange(n, dtype=float)
    data = Dataset(y, np.ones((n, 1)))
    # predictions sitting exactly above tau*n observations
    taus = (0.5, 0.9)
    preds = np.column_stack([np.full(n, y[int(t * n) - 1] + 0.5) for t in taus])
    assert prediction_error(preds, data, taus) == pytest.approx(0.0, abs=1e-12)


def test_pe_worked_value():
    n = 100
    y = np.arange(n, dtype=float)
    data = Dataset(y, np.ones((n, 1)))
    preds = np.full((n, 1), 97.5)  # y = 0..99, so 98 of 100 lie below
    got = prediction_error(preds, data, (0.99,))
    assert got == pytest.approx(1.00504, abs=1e-5)


def test_pe_scales_as_sqrt_n():
    taus = (0.9,)
    n = 100
    y = np.arange(n, dtype=float)
    preds = np.full((n, 1), 84.5)  # coverage 0.85
    pe1 = prediction_error(preds, Dataset(y, np.ones((n, 1))), taus)
    y2 = np.arange(2 * n, dtype=float)
    preds2 = np.full((2 * n, 1), 169.5)  # same coverage gap
    pe2 = prediction_error(preds2, Dataset(y2, np.ones((2 * n, 1))), taus)
    assert pe2 / pe1 == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_pe_permutation_invariant(table1_model, small_data):
    taus = (0.991, 0.995)
    base = prediction_error(table1_model, small_data, taus)
    rng = np.random.default_rng(2)
    perm = rng.permutation(small_data.n)
    shuffled = Dataset(small_data.y[perm], small_data.X[perm])
    assert prediction_error(table1_model, shuffled, taus) == pytest.approx(base, rel=1e-12)


def test_pe_uses_strict_inequality():
    y = np.zeros(10)
    data = Dataset(y, np.ones((10, 1)))
    preds = np.zeros((10, 1))  # predictions equal to every observation
    tau = 0.5
    got = prediction_error(preds, data, (tau,))
    # strict '<' means coverage 0, not 1: |0 - 0.5| scaled
    expected = np.sqrt(10) * 0.5 / np.sqrt(0.25)
    assert got == pytest.approx(expected)


# -- rescaling ------------------------------------------------------------------

def test_rescale_lambda():
    assert rescale_lambda(1.0, 800, 1000) == pytest.approx(np.sqrt(0.8))
    assert rescale_lambda(0.3, 500, 500) == pytest.approx(0.3)
    assert rescale_lambda(1.0, 4, 5) == pytest.approx(np.sqrt(4 / 5))
    assert rescale_lambda(1.0, 800, 1000) == pytest.approx(0.894427, abs=1e-6)
    with pytest.raises(DomainError):
        rescale_lambda(1.0, 0, 10)


# -- cross validation -----------------------------------------------------------

def stub_fitter(offsets):
    """Fitter returning fixed models regardless of data: beta = offset pattern."""

    def fitter(train, grid, lambdas):
        models = []
        for lam in lambdas:
            beta = np.array([offsets.get(lam, 0.0), 0, 0, 0, 0, 0, 0, 0, 0])
            models.append(QirModel(TUKEY, default_links(TUKEY), beta, p=3,
                                   tail_scaling=train.tail_scaling))
        return models

    return fitter


def test_fold_assignments_partition_and_determinism():
    blocks = fold_assignments(103, 5, seed=9, repeat=2)
    assert sorted(np.concatenate(blocks).tolist()) == list(range(103))
    again = fold_assignments(103, 5, seed=9, repeat=2)
    assert all(np.array_equal(a, b) for a, b in zip(blocks, again))
    other = fold_assignments(103, 5, seed=9, repeat=3)
    assert not all(np.array_equal(a, b) for a, b in zip(blocks, other))


def test_single_candidates_returned(small_data):
    spec = TuneSpec(tau_u=0.95, tau_l_candidates=(0.6,), K=5, lambdas=(0.25,),
                    folds=3, repeats=1, target_taus=(0.97,), seed=1)
    sel = cross_validate(small_data, spec, TUKEY, default_links(TUKEY),
                         fitter=stub_fitter({0.25: 1.0}))
    assert sel.tau_l == 0.6
    assert sel.lam == 0.25


def test_cross_validate_bitwise_reproducible(small_data):
    spec = TuneSpec(tau_u=0.95, tau_l_candidates=(0.5, 0.7), K=5,
                    lambdas=(0.4, 0.1), folds=3, repeats=2, target_taus=(0.97,),
                    seed=7)
    fitter = stub_fitter({0.4: 0.8, 0.1: 1.2})
    a = cross_validate(small_data, spec, TUKEY, default_links(TUKEY), fitter=fitter)
    b = cross_validate(small_data, spec, TUKEY, default_links(TUKEY), fitter=fitter)
    assert a.tau_l == b.tau_l and a.lam == b.lam
    assert a.report_lines() == b.report_lines()


def test_selected_lambda_no_worse_than_grid_extremes(small_data):
    spec = TuneSpec(tau_u=0.95, tau_l_candidates=(0.5,), K=5,
                    lambdas=(0.5, 0.05, 0.005), folds=4, repeats=2,
                    target_taus=(0.97,), seed=3)
    sel = cross_validate(small_data, spec, TUKEY, default_links(TUKEY))
    losses = {}
    for rec in sel.records:
        losses.setdefault(rec.lam, []).append(rec.cv_loss)
    means = {lam: np.mean(v) for lam, v in losses.items()}
    assert means[sel.lam] <= means[0.5] + 1e-12
    assert means[sel.lam] <= means[0.005] + 1e-12


def test_failing_cells_are_skipped_and_all_failures_raise(small_data):
    calls = {"n": 0}

    def flaky(train, grid, lambdas):
        calls["n"] += 1
        if calls["n"] % 2 == 0:
            raise QirError("synthetic failure")
        return stub_fitter({lam: 1.0 for lam in lambdas})(train, grid, lambdas)

    spec = TuneSpec(tau_u=0.95, tau_l_candidates=(0.6,), K=5, lambdas=(0.1,),
                    folds=3, repeats=2, target_taus=(0.97,), seed=5)
    sel = cross_validate(small_data, spec, TUKEY, default_links(TUKEY), fitter=flaky)
    assert sel.tau_l == 0.6

    def always_fails(train, grid, lambdas):
        raise QirError("nope")

    with pytest.raises(TuningError):
        cross_validate(small_data, spec, TUKEY, default_links(TUKEY),
                       fitter=always_fails)


def test_tune_spec_validation():
    with pytest.raises(DomainError):
        TuneSpec(tau_u=0.99, tau_l_candidates=(0.995,))
    with pytest.raises(DomainError):
        TuneSpec(tau_u=0.99, tau_l_candidates=(0.5,), target_taus=(0.98,))
    with pytest.raises(DomainError):
        TuneSpec(tau_u=0.95, tau_l_candidates=(0.5,), folds=1)
    with pytest.raises(DomainError):
        TuneSpec(tau_u=0.95, tau_l_candidates=())


def test_report_lines_format(small_data):
    spec = TuneSpec(tau_u=0.95, tau_l_candidates=(0.6,), K=5, lambdas=(0.1,),
                    folds=2, repeats=1, target_taus=(0.97,), seed=5)
    sel = cross_validate(small_data, spec, TUKEY, default_links(TUKEY),
                         fitter=stub_fitter({0.1: 1.0}))
    lines = sel.report_lines()
    assert lines[0] == "tau_L,lambda,fold,repeat,cv_loss,pe"
    assert len(lines) == 1 + 2  # two folds, one repeat, one lambda, one tau_L
