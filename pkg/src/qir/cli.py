"""Command-line front end: fit, predict, tune, and simulate.

Datasets are RFC-4180-style CSV with a header row; models are JSON
documents whose coefficients round-trip exactly; experiment scenarios
are JSON config files. Exit status: 0 success, 1 usage or input error,
2 numerical failure.
"""

import argparse
import csv
import json
import sys

import numpy as np

from .errors import DataError, QirError
from .families import get_family
from .inference import CovarianceEstimate, estimate_sandwich, predict_quantile_ci
from .model import Dataset, QirModel, TailScaling, default_links
from .optim import FitConfig, PenaltySpec, fit_cqr, fit_regularized
from .sim import load_experiment_config, run_experiment
from .tuning import TuneSpec, cross_validate, quantile_grid

USAGE_EXIT = 1
NUMERIC_EXIT = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def parse_dataset(path, response=None, intercept=False):
    """Read a headered CSV into a Dataset; typed errors carry row/column."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if response is not None and response not in header:
            raise DataError(f"{path}: no column named {response!r} in header")
        rows = []
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell at row {lineno}, column {name!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    if response is None:
        y = table[:, 0]
        X = table[:, 1:]
    else:
        ri = header.index(response)
        y = table[:, ri]
        X = np.delete(table, ri, axis=1)
    if intercept:
        X = np.column_stack([np.ones(len(y)), X])
    if X.shape[1] == 0:
        raise DataError(f"{path}: no covariate columns")
    return Dataset(y, X)


def write_dataset(dataset, path, response="y"):
    """Inverse of parse_dataset (full-precision floats, no intercept column)."""
    header = [response] + [f"x{j+1}" for j in range(dataset.p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for yi, xi in zip(dataset.y, dataset.X):
            writer.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def _parse_floats(text):
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise _UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _fmt(x):
    return f"{x:.6g}"


def _build_parser():
    parser = _Parser(prog="qir", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a quantile index model", parents=[])
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--response", default=None,
                       help="response column name (default: first column)")
    p_fit.add_argument("--intercept", action="store_true",
                       help="prepend a constant covariate column")
    p_fit.add_argument("--family", default="tukey",
                       choices=("tukey", "glambda", "gaussian"))
    p_fit.add_argument("--grid-lo", type=float, default=0.5)
    p_fit.add_argument("--grid-hi", type=float, default=0.99)
    p_fit.add_argument("--grid-k", type=int, default=10)
    p_fit.add_argument("--penalty", choices=("scad", "mcp"), default=None)
    p_fit.add_argument("--lambda", dest="lam", type=float, default=None)
    p_fit.add_argument("--scad-a", type=float, default=3.7)
    p_fit.add_argument("--mcp-gamma", type=float, default=3.0)
    p_fit.add_argument("--tail-scaling", action="store_true",
                       help="min-max scale covariates inside the tail index")
    p_fit.add_argument("--init", choices=("zeros", "random"), default="zeros")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--max-iter", type=int, default=10000)
    p_fit.add_argument("--out", required=True, help="model JSON path")
    p_fit.add_argument("--report", default=None, help="fit report JSON path")
    p_fit.add_argument("--cov-out", default=None,
                       help="write the sandwich covariance estimate (JSON)")

    p_pred = sub.add_parser("predict", help="predict conditional quantiles")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--data", default=None)
    p_pred.add_argument("--response", default=None)
    p_pred.add_argument("--intercept", action="store_true")
    p_pred.add_argument("--x", default=None,
                        help="single covariate row, comma separated")
    p_pred.add_argument("--tau", required=True,
                        help="comma-separated quantile levels")
    p_pred.add_argument("--cov", default=None,
                        help="covariance JSON from fit --cov-out (enables CIs)")
    p_pred.add_argument("--level", type=float, default=0.95)
    p_pred.add_argument("--out", default=None, help="write DSV here instead of stdout")

    p_tune = sub.add_parser("tune", help="cross-validate lambda and tau_L")
    p_tune.add_argument("--data", required=True)
    p_tune.add_argument("--response", default=None)
    p_tune.add_argument("--intercept", action="store_true")
    p_tune.add_argument("--tau-u", type=float, required=True)
    p_tune.add_argument("--tau-l", required=True,
                        help="comma-separated tau_L candidates")
    p_tune.add_argument("--grid-k", type=int, default=10)
    p_tune.add_argument("--lambdas", default="",
                        help="comma-separated penalty levels (empty: unpenalized)")
    p_tune.add_argument("--folds", type=int, default=5)
    p_tune.add_argument("--repeats", type=int, default=5)
    p_tune.add_argument("--target-taus", default="0.991,0.995")
    p_tune.add_argument("--seed", type=int, default=0)
    p_tune.add_argument("--penalty", choices=("scad", "mcp"), default="scad")
    p_tune.add_argument("--out", default=None, help="write the cell report DSV here")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    p_sim.add_argument("--config", required=True, help="JSON scenario file")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--threads", type=int, default=None)

    return parser


def _cmd_fit(args):
    data = parse_dataset(args.data, args.response, args.intercept)
    if args.tail_scaling:
        data = Dataset(data.y, data.X, tail_scaling=TailScaling.from_data(data.X))
    family = get_family(args.family)
    links = default_links(family)
    grid = quantile_grid(args.grid_lo, args.grid_hi, args.grid_k)
    init = "zeros" if args.init == "zeros" else ("random", 1.0, args.seed)
    config = FitConfig(max_iter=args.max_iter, init=init)
    if args.penalty is not None:
        if args.lam is None:
            raise _UsageError("--penalty requires --lambda")
        spec = PenaltySpec(kind=args.penalty, lam=args.lam, a=args.scad_a,
                           gamma=args.mcp_gamma)
        result = fit_regularized(family, links, data, grid, spec, config)
    else:
        result = fit_cqr(family, links, data, grid, config)
    model = QirModel(family, links, result.beta_hat, p=data.p,
                     tail_scaling=data.tail_scaling)
    model.save(args.out)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump({
                "final_loss": result.final_loss,
                "n_iter": result.n_iter,
                "converged": result.converged,
                "loss_trace": [float(v) for v in result.loss_trace],
            }, fh, indent=2)
            fh.write("\n")
    if args.cov_out:
        cov = estimate_sandwich(model, data, grid)
        with open(args.cov_out, "w") as fh:
            json.dump({
                "sandwich": cov.sandwich.tolist(),
                "omega0": cov.omega0.tolist(),
                "omega1": cov.omega1.tolist(),
                "n": cov.n,
                "bandwidth": cov.bandwidth,
            }, fh, indent=2)
            fh.write("\n")
    print(f"fit: loss={_fmt(result.final_loss)} iters={result.n_iter} "
          f"converged={result.converged} -> {args.out}")
    return 0


def _load_cov(path):
    with open(path) as fh:
        obj = json.load(fh)
    return CovarianceEstimate(
        omega0=np.asarray(obj["omega0"], dtype=float),
        omega1=np.asarray(obj["omega1"], dtype=float),
        sandwich=np.asarray(obj["sandwich"], dtype=float),
        n=int(obj["n"]),
        bandwidth=float(obj["bandwidth"]),
    )


def _cmd_predict(args):
    model = QirModel.load(args.model)
    taus = _parse_floats(args.tau)
    if not taus:
        raise _UsageError("--tau needs at least one level")
    if (args.x is None) == (args.data is None):
        raise _UsageError("provide exactly one of --x or --data")
    if args.x is not None:
        rows = np.asarray([_parse_floats(args.x)], dtype=float)
        data = None
    else:
        data = parse_dataset(args.data, args.response, args.intercept)
        rows = data.X
    if rows.shape[1] != model.p:
        raise DataError(f"model expects {model.p} covariates, got {rows.shape[1]}")
    cov = _load_cov(args.cov) if args.cov else None
    if cov is not None and data is None:
        raise _UsageError("interval prediction needs --data to average the gradient")

    header = ["row", "tau", "prediction"] + (["lo", "hi"] if cov else [])
    lines = [",".join(header)]
    display = [header]
    for i, x in enumerate(rows):
        for tau in taus:
            pred = model.predict_quantile(x, tau)
            cells = [str(i), repr(float(tau)), repr(pred)]
            shown = [str(i), _fmt(tau), _fmt(pred)]
            if cov is not None:
                lo, hi = predict_quantile_ci(model, cov, data, x, tau, args.level)
                cells += [repr(lo), repr(hi)]
                shown += [_fmt(lo), _fmt(hi)]
            lines.append(",".join(cells))
            display.append(shown)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {len(lines) - 1} predictions -> {args.out}")
    else:
        for row in display:
            print(",".join(row))
    return 0


def _cmd_tune(args):
    data = parse_dataset(args.data, args.response, args.intercept)
    spec = TuneSpec(
        tau_u=args.tau_u,
        tau_l_candidates=_parse_floats(args.tau_l),
        K=args.grid_k,
        lambdas=_parse_floats(args.lambdas),
        folds=args.folds,
        repeats=args.repeats,
        target_taus=_parse_floats(args.target_taus),
        seed=args.seed,
        penalty_kind=args.penalty,
    )
    family = get_family("tukey")
    selection = cross_validate(data, spec, family, default_links(family))
    if args.out:
        selection.write_report(args.out)
    print(f"selected tau_L={_fmt(selection.tau_l)} lambda={_fmt(selection.lam)}")
    for tau_l in sorted(selection.pe_by_tau_l):
        print(f"  tau_L={_fmt(tau_l)}: lambda={_fmt(selection.lambda_by_tau_l[tau_l])} "
              f"pe={_fmt(selection.pe_by_tau_l[tau_l])} "
              f"cv_loss={_fmt(selection.cv_loss_by_tau_l[tau_l])}")
    return 0


def _cmd_simulate(args):
    kind, config = load_experiment_config(args.config)
    if args.threads is not None:
        config.threads = max(1, args.threads)
    report = run_experiment(kind, config, out_dir=args.out_dir)
    for row in report.aggregates:
        print(",".join(f"{k}={_fmt(v) if isinstance(v, float) else v}"
                       for k, v in row.items()))
    n_fail = len(report.failures())
    if n_fail:
        print(f"warning: {n_fail} replications failed", file=sys.stderr)
    print(f"reports -> {args.out_dir}")
    return 0


_COMMANDS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "tune": _cmd_tune,
    "simulate": _cmd_simulate,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    try:
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except QirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NUMERIC_EXIT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
