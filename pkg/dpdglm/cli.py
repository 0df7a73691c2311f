"""
Command-line interface: fit, test, power, table, ifgrid and simulate.

Exit codes: 0 on success, 1 for input, usage and numerical errors, 2 when the
estimator fails to converge.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from dpdglm.asymp import UnivariateNormal
from dpdglm.config import DEFAULT_LEVEL, FIT_TOL, MAX_ITER, TABLE_ALPHAS, FitOptions, default_log_level
from dpdglm.dataset import load_csv
from dpdglm.errors import DpdGlmError, InputError, NonConvergence
from dpdglm.estim import MdpdeFit, fit_mdpde
from dpdglm.model import Eta, make_model
from dpdglm.robust import GridSpec, if_grid_scan
from dpdglm.simharness import SimConfig, run_estimation_study, run_level_power_study
from dpdglm.tables import TABLE_KINDS, build_table
from dpdglm.wald import LinearHypothesis, power_fixed_alternative, required_sample_size, wald_statistic

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NONCONVERGENCE = 2


class UsageError(InputError):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def non_negative_float(text: str) -> float:
    value = _float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0 (got {text})")
    return value


def probability(text: str) -> float:
    value = _float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1) (got {text})")
    return value


def _float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not np.isfinite(value):
        raise argparse.ArgumentTypeError(f"not finite: {text!r}")
    return value


def float_list(text: str) -> List[float]:
    return [_float(part) for part in text.split(",") if part.strip()]


def matrix(text: str) -> List[List[float]]:
    """Rows separated by ';', entries by ','."""
    rows = [float_list(row) for row in text.split(";") if row.strip()]
    if not rows or len({len(r) for r in rows}) != 1:
        raise argparse.ArgumentTypeError(f"ragged or empty matrix: {text!r}")
    return rows


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    common.add_argument("--verbose", action="store_true", help="log solver details")

    model_opts = _Parser(add_help=False)
    model_opts.add_argument("--family", choices=["poisson", "normal"], default="poisson")
    model_opts.add_argument("--alpha", type=non_negative_float, default=0.0, help="DPD tuning parameter")
    model_opts.add_argument("--level", type=probability, default=DEFAULT_LEVEL, help="test level")

    data_opts = _Parser(add_help=False)
    data_opts.add_argument("csv_path", type=Path)
    data_opts.add_argument("--y", dest="y_column", help="response column (default: y or first column)")
    data_opts.add_argument("--x", dest="x_columns", help="comma-separated covariate columns")
    data_opts.add_argument("--intercept", action="store_true", help="prepend a constant covariate")
    data_opts.add_argument("--phi", type=_float, help="fix the normal dispersion")
    data_opts.add_argument("--tol", type=_float, default=FIT_TOL)
    data_opts.add_argument("--max-iter", type=int, default=MAX_ITER)
    data_opts.add_argument("--format", choices=["text", "kv"], default="text")

    parser = _Parser(prog="dpdglm", description="Robust DPD estimation and Wald-type tests for GLMs")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("fit", parents=[common, model_opts, data_opts], help="fit the MDPDE to a CSV file")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("test", parents=[common, model_opts, data_opts], help="Wald-type test of L beta = l0")
    p.add_argument("--L", dest="L", type=matrix, help="restriction matrix, rows separated by ';'")
    p.add_argument("--l0", type=float_list, help="right-hand side")
    p.add_argument("--phi0", type=_float, help="test H0: phi = phi0 instead")
    p.set_defaults(handler=cmd_test)

    p = sub.add_parser("power", parents=[common, model_opts], help="power or sample size at a fixed alternative")
    p.add_argument("--beta-star", type=float_list, required=True, help="true coefficients")
    p.add_argument("--phi", type=_float, help="true dispersion (normal family)")
    p.add_argument("--L", dest="L", type=matrix, default=None)
    p.add_argument("--l0", type=float_list, required=True)
    p.add_argument("--mu-x", type=_float, default=0.0)
    p.add_argument("--sd-x", type=_float, default=1.0)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--derivative", choices=["diagonal", "first_slot"], default="diagonal")
    target = p.add_mutually_exclusive_group(required=True)
    target.add_argument("--n", type=int)
    target.add_argument("--target-power", type=probability)
    p.set_defaults(handler=cmd_power)

    p = sub.add_parser("table", parents=[common], help="asymptotic efficiency or contiguous power table")
    p.add_argument("which", choices=sorted(TABLE_KINDS))
    p.add_argument("--output", type=Path)
    p.add_argument("--level", type=probability, default=DEFAULT_LEVEL)
    p.add_argument("--alphas", type=float_list, default=list(TABLE_ALPHAS))
    p.add_argument("--mc-draws", type=int, help="use an empirical covariate sample of this size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_table)

    p = sub.add_parser("ifgrid", parents=[common, model_opts], help="influence functions over a (y, x) grid")
    p.add_argument("which", choices=["estimator", "if2", "pif"])
    p.add_argument("--beta", type=_float, default=1.0)
    p.add_argument("--phi", type=_float, help="dispersion (normal family)")
    p.add_argument("--mu-x", type=_float, default=0.0)
    p.add_argument("--d", type=_float, default=1.0)
    p.add_argument("--y-max", type=int, default=30)
    p.add_argument("--x-min", type=_float, default=-3.0)
    p.add_argument("--x-max", type=_float, default=3.0)
    p.add_argument("--x-step", type=_float, default=0.05)
    p.add_argument("--output", type=Path)
    p.set_defaults(handler=cmd_ifgrid)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo study from a TOML config")
    p.add_argument("config_path", type=Path)
    p.add_argument("--output", type=Path)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--n-jobs", type=int, help="override the config parallelism")
    p.set_defaults(handler=cmd_simulate)
    return parser


def configure_logging(args) -> None:
    level = default_log_level()
    if getattr(args, "quiet", False):
        level = logging.WARNING
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )
    logging.getLogger("dpdglm").setLevel(level)


def _fit_from_args(args):
    model = make_model(args.family, phi=args.phi)
    x_columns = [c.strip() for c in args.x_columns.split(",")] if args.x_columns else None
    dataset = load_csv(args.csv_path, args.y_column, x_columns, args.intercept, model=model)
    options = FitOptions(tol=args.tol, max_iter=args.max_iter)
    fit = fit_mdpde(model, dataset.sample, args.alpha, options)
    return dataset, fit


def _fit_lines(dataset, fit: MdpdeFit, fmt: str) -> List[str]:
    names = list(dataset.design_names)
    if fit.eta_hat.phi is not None:
        names.append("phi")
    estimates = fit.eta_hat.to_vector()
    errors = fit.standard_errors
    if fmt == "kv":
        lines = [
            f"family={fit.model.family.value}",
            f"alpha={fit.alpha!r}",
            f"n={fit.n_obs}",
            f"converged={str(fit.converged).lower()}",
            f"iterations={fit.iterations}",
            f"gradient_norm={fit.gradient_norm!r}",
        ]
        for name, value, se in zip(names, estimates, errors):
            lines.append(f"estimate.{name}={float(value)!r}")
            lines.append(f"std_error.{name}={float(se)!r}")
        return lines
    lines = [
        f"MDPDE fit: family={fit.model.family.value}, alpha={fit.alpha:g}, n={fit.n_obs}",
        f"converged after {fit.iterations} iterations (|mean psi| = {fit.gradient_norm:.2e})",
        f"{'parameter':<16}{'estimate':>14}{'std.error':>14}",
    ]
    for name, value, se in zip(names, estimates, errors):
        lines.append(f"{name:<16}{value:>14.6f}{se:>14.6f}")
    return lines


def cmd_fit(args) -> int:
    dataset, fit = _fit_from_args(args)
    print("\n".join(_fit_lines(dataset, fit, args.format)))
    return EXIT_OK


def cmd_test(args) -> int:
    if args.phi0 is not None:
        if args.L is not None:
            raise UsageError("give either --L/--l0 or --phi0, not both")
    elif args.l0 is None:
        raise UsageError("test needs --l0 (with --L) or --phi0")
    dataset, fit = _fit_from_args(args)
    if args.phi0 is not None:
        if fit.eta_hat.phi is None:
            raise UsageError("--phi0 needs a model with unknown dispersion")
        hypothesis = LinearHypothesis.dispersion(args.phi0, fit.eta_hat.k)
    else:
        L = args.L if args.L is not None else [[1.0] + [0.0] * (fit.eta_hat.k - 1)]
        hypothesis = LinearHypothesis(L=L, l0=args.l0)
    levels = sorted({args.level, 0.01, 0.05, 0.10})
    result = wald_statistic(fit, hypothesis, levels=levels)
    decision = result.reject_at[args.level]
    if args.format == "kv":
        print(f"statistic={result.statistic!r}")
        print(f"df={result.df}")
        print(f"p_value={result.p_value!r}")
        print(f"level={args.level!r}")
        print(f"reject={str(decision).lower()}")
    else:
        print(f"Wald-type test (alpha={fit.alpha:g}, n={fit.n_obs})")
        print(f"statistic = {result.statistic:.6f} on {result.df} df, p-value = {result.p_value:.6g}")
        print(f"{'reject' if decision else 'do not reject'} H0 at level {args.level:g}")
    return EXIT_OK


def cmd_power(args) -> int:
    model = make_model(args.family)
    eta_star = Eta(beta=args.beta_star, phi=None if model.dispersion_known else args.phi)
    eta_star.validate(model)
    dist = UnivariateNormal(mu_x=args.mu_x, sd=args.sd_x, intercept=args.intercept)
    L = args.L if args.L is not None else [[1.0] + [0.0] * (eta_star.k - 1)]
    hypothesis = LinearHypothesis(L=L, l0=args.l0)
    if args.n is not None:
        value = power_fixed_alternative(
            model, dist, eta_star, hypothesis, args.n, args.level, args.alpha, args.derivative
        )
        print(f"power={value!r}")
    else:
        n = required_sample_size(
            model, dist, eta_star, hypothesis, args.target_power, args.level, args.alpha, args.derivative
        )
        print(f"sample_size={n}")
    return EXIT_OK


def _write_frame(frame: pd.DataFrame, output: Optional[Path], float_format: Optional[str] = None) -> None:
    if output is None:
        frame.to_csv(sys.stdout, index=False, float_format=float_format)
        return
    output.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(output, index=False, float_format=float_format)
    logger.info(f"Wrote {len(frame)} rows to {output}")


def cmd_table(args) -> int:
    frame = build_table(args.which, alphas=args.alphas, level=args.level, mc_draws=args.mc_draws, seed=args.seed)
    _write_frame(frame, args.output, float_format="%.3f")
    return EXIT_OK


def cmd_ifgrid(args) -> int:
    model = make_model(args.family)
    eta = Eta(beta=[args.beta], phi=None if model.dispersion_known else args.phi)
    eta.validate(model)
    dist = UnivariateNormal(mu_x=args.mu_x, sd=1.0)
    spec = GridSpec.figure_default(args.y_max, args.x_min, args.x_max, args.x_step)
    hypothesis = LinearHypothesis(L=[[1.0]], l0=[args.beta])
    d = np.zeros(len(eta.to_vector()))
    d[0] = args.d
    grid = if_grid_scan(model, dist, eta, args.alpha, args.which, spec, hypothesis, d, args.level)
    _write_frame(grid.to_frame(), args.output)
    if args.output is not None:
        print(f"sup_abs={grid.sup_abs!r}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = SimConfig.from_toml(args.config_path)
    raw = config.to_dict()
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.n_jobs is not None:
        raw["n_jobs"] = args.n_jobs
    config = SimConfig.from_dict(raw)
    if config.hypothesis is not None:
        report = run_level_power_study(config)
    else:
        report = run_estimation_study(config)
    _write_frame(report.to_frame(), args.output)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    configure_logging(args)
    try:
        return args.handler(args)
    except NonConvergence as e:
        print(f"error: estimator did not converge: {e}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DpdGlmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
