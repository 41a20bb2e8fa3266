"""Level-grid construction, the coverage-calibration criterion, and CV.

Tuning selects two things at once: the penalty level lambda (by held-out
composite check loss) and the lower end tau_L of the fitting interval
(by the prediction-error criterion PE, which measures how far empirical
exceedance rates at the target levels sit from their nominal values).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, QirError, TuningError
from .loss import LevelGrid, composite_loss
from .model import QirModel
from .optim import FitConfig, PenaltySpec, fit_cqr, fit_regularized


def quantile_grid(tau_l, tau_u, K):
    """K levels tau_k = tau_L + k (tau_U - tau_L)/(K+1), k = 1..K."""
    tau_l, tau_u = float(tau_l), float(tau_u)
    if not (0.0 < tau_l < tau_u < 1.0):
        raise DomainError("need 0 < tau_L < tau_U < 1")
    if int(K) < 1:
        raise DomainError("K must be at least 1")
    k = np.arange(1, int(K) + 1)
    return LevelGrid(tau_l + k * (tau_u - tau_l) / (int(K) + 1))


def prediction_error(model_or_preds, data, target_taus):
    """Scaled absolute gap between empirical exceedance rates and targets.

    PE = (1/M) sum_m [tau_m (1 - tau_m)]^(-1/2) * sqrt(n)
         * | n^{-1} sum_i 1{y_i < Q^(tau_m | x_i)} - tau_m |.
    """
    target_taus = np.atleast_1d(np.asarray(target_taus, dtype=float))
    if target_taus.size == 0:
        raise DomainError("need at least one target level")
    n = data.n
    if isinstance(model_or_preds, QirModel):
        theta = model_or_preds.index_matrix(data.X)
        preds = model_or_preds.family.quantile(target_taus[:, None], theta)  # (M, n)
    else:
        preds = np.asarray(model_or_preds, dtype=float)
        if preds.shape == (n, target_taus.size):
            preds = preds.T
        if preds.shape != (target_taus.size, n):
            raise DomainError("prediction matrix must be (n, M) or (M, n)")
    cover = (data.y[None, :] < preds).mean(axis=1)
    scale = 1.0 / np.sqrt(target_taus * (1.0 - target_taus))
    return float(np.mean(scale * np.sqrt(n) * np.abs(cover - target_taus)))


def rescale_lambda(lambda_cv, n_train, n_full):
    """Carry a CV-selected lambda to the full sample: lambda * sqrt(n_train/n_full)."""
    if n_train <= 0 or n_full <= 0:
        raise DomainError("sample sizes must be positive")
    return float(lambda_cv) * float(np.sqrt(n_train / n_full))


@dataclass
class TuneSpec:
    """Search space and protocol for joint (lambda, tau_L) selection."""

    tau_u: float
    tau_l_candidates: tuple
    K: int = 10
    lambdas: tuple = ()
    folds: int = 5
    repeats: int = 5
    target_taus: tuple = (0.991, 0.995)
    seed: int = 0
    penalty_kind: str = "scad"
    penalty_shape: float = 3.7

    def __post_init__(self):
        taus = tuple(self.tau_l_candidates) + (self.tau_u,) + tuple(self.target_taus)
        if any(not 0.0 < t < 1.0 for t in taus):
            raise DomainError("all levels must lie in (0, 1)")
        if any(t >= self.tau_u for t in self.tau_l_candidates):
            raise DomainError("tau_L candidates must lie below tau_U")
        if self.tau_u >= min(self.target_taus):
            raise DomainError("tau_U must lie below the target levels")
        if self.folds < 2:
            raise DomainError("need at least two folds")
        if not self.tau_l_candidates:
            raise DomainError("need at least one tau_L candidate")


@dataclass
class CvRecord:
    tau_l: float
    lam: float
    fold: int
    repeat: int
    cv_loss: float
    pe: float


@dataclass
class Selection:
    """Cross-validation outcome: per-tau_L lambda choices and the PE winner."""

    tau_l: float
    lam: float
    lambda_by_tau_l: dict
    pe_by_tau_l: dict
    cv_loss_by_tau_l: dict
    records: list = field(repr=False)

    def report_lines(self, sep=","):
        header = sep.join(["tau_L", "lambda", "fold", "repeat", "cv_loss", "pe"])
        rows = [
            sep.join([
                repr(r.tau_l), repr(r.lam), str(r.fold), str(r.repeat),
                repr(r.cv_loss), repr(r.pe),
            ])
            for r in self.records
        ]
        return [header] + rows

    def write_report(self, path, sep=","):
        with open(path, "w") as fh:
            fh.write("\n".join(self.report_lines(sep)) + "\n")


def fold_assignments(n, folds, seed, repeat):
    """Deterministic permutation split into contiguous blocks, one per fold."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(repeat,)))
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def default_path_fitter(family, links, config=None, penalty_kind="scad", penalty_shape=3.7):
    """Fit a descending-lambda path, warm-starting each fit at the previous one.

    lambda == 0 falls back to the unpenalized estimator.
    """
    base = config or FitConfig()

    def fitter(train, grid, lambdas):
        results = []
        warm = None
        for lam in lambdas:
            cfg = FitConfig(
                bls_a=base.bls_a, bls_b=base.bls_b, eta0=base.eta0,
                max_iter=base.max_iter, tol=base.tol, obj_tol=base.obj_tol,
                init=warm if warm is not None else base.init,
            )
            if lam == 0.0:
                res = fit_cqr(family, links, train, grid, cfg)
            else:
                spec = PenaltySpec(kind=penalty_kind, lam=lam, a=penalty_shape,
                                   gamma=penalty_shape)
                res = fit_regularized(family, links, train, grid, spec, cfg)
            warm = res.beta_hat
            results.append(QirModel(family, tuple(links), res.beta_hat,
                                    p=train.p, tail_scaling=train.tail_scaling))
        return results

    return fitter


def cross_validate(data, spec, family, links, fitter=None, config=None):
    """Joint (lambda, tau_L) selection by repeated k-fold cross-validation.

    For every tau_L candidate, lambda minimizes the mean held-out composite
    check loss (per observation, averaged over folds x repeats; ties go to
    the larger lambda). The tau_L returned is the candidate whose selected
    lambda attains the smallest mean held-out PE.
    """
    if fitter is None:
        fitter = default_path_fitter(
            family, links, config=config,
            penalty_kind=spec.penalty_kind, penalty_shape=spec.penalty_shape,
        )
    lambdas = tuple(sorted(spec.lambdas, reverse=True)) or (0.0,)
    n = data.n
    records = []
    lambda_by, pe_by, loss_by = {}, {}, {}

    for tau_l in spec.tau_l_candidates:
        grid = quantile_grid(tau_l, spec.tau_u, spec.K)
        n_lam = len(lambdas)
        cell_loss = np.full((spec.repeats, spec.folds, n_lam), np.nan)
        cell_pe = np.full((spec.repeats, spec.folds, n_lam), np.nan)
        for rep in range(spec.repeats):
            blocks = fold_assignments(n, spec.folds, spec.seed, rep)
            for fold, test_idx in enumerate(blocks):
                mask = np.ones(n, dtype=bool)
                mask[test_idx] = False
                train, test = data.subset(mask), data.subset(test_idx)
                try:
                    models = fitter(train, grid, lambdas)
                except QirError:
                    continue  # whole-cell failure stays missing
                for li, model in enumerate(models):
                    if model is None:
                        continue
                    try:
                        held = composite_loss(model, test, grid) / (test.n * grid.K)
                        pe = prediction_error(model, test, spec.target_taus)
                    except QirError:
                        continue
                    cell_loss[rep, fold, li] = held
                    cell_pe[rep, fold, li] = pe
                    records.append(CvRecord(tau_l, lambdas[li], fold, rep, held, pe))
        with np.errstate(invalid="ignore"):
            mean_loss = np.nanmean(cell_loss.reshape(-1, n_lam), axis=0)
        if np.all(np.isnan(mean_loss)):
            continue  # tau_L candidate excluded entirely
        li_best = int(np.nanargmin(mean_loss))  # descending order: ties -> larger lambda
        pe_cells = cell_pe[:, :, li_best]
        lambda_by[tau_l] = lambdas[li_best]
        pe_by[tau_l] = float(np.nanmean(pe_cells))
        loss_by[tau_l] = float(mean_loss[li_best])

    if not lambda_by:
        raise TuningError("every (tau_L, lambda) cell failed during cross-validation")
    tau_best = min(pe_by, key=lambda t: (pe_by[t], t))
    return Selection(
        tau_l=tau_best,
        lam=lambda_by[tau_best],
        lambda_by_tau_l=lambda_by,
        pe_by_tau_l=pe_by,
        cv_loss_by_tau_l=loss_by,
        records=records,
    )
