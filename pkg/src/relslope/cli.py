"""Command-line interface.

Subcommands:
  test-scalar       one-sample test, scalar responses
  test-functional   one-sample test, functional responses
  test-two-sample   two-sample test on independent scalar-response samples
  test-location     test of distance to a hypothesized slope
  ci                confidence intervals for the squared slope norm
  quantiles         simulate pivotal quantiles (reproduces the quantile table)
  simulate          Monte-Carlo rejection/coverage experiments

All reports are JSON on stdout (or --output); simulate also writes CSV
and a rejection figure.  Exit codes: 0 completed, 2 usage error, 3 data
contract error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ContractError, NumericalError
from .funcspace import (
    Grid,
    empirical_covariance,
    read_curves_csv,
    read_scalars_csv,
)
from .eigensys import (
    DEFAULT_GALERKIN_DIM,
    default_truncation,
    solve_eigen_scalar,
    solve_eigen_functional,
)
from .estimator import FractionScheme, fit_functional, fit_scalar
from .inference import (
    confidence_intervals,
    decide,
    stats_functional,
    stats_location,
    stats_one_sample_scalar,
    stats_two_sample,
)
from .pivotal import PivotalConfig, cached_table
from .simharness import DgpSpec, run_coverage_experiment, run_rejection_experiment

_CACHE_ENV = "RELSLOPE_CACHE_DIR"


def _cache_dir() -> Path:
    return Path(os.environ.get(_CACHE_ENV, Path.home() / ".cache" / "relslope"))


def _add_scheme_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nu0", type=float, default=0.5, help="smallest sample fraction")
    p.add_argument("--Q", type=int, default=25, help="number of sample fractions")
    p.add_argument("--alpha", type=float, default=0.05, help="nominal level")


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", type=int, default=101, help="grid size of the curves")
    p.add_argument(
        "--lambda", dest="lam", default="gcv",
        help="regularization parameter, a number or 'gcv'",
    )
    p.add_argument("--r", type=int, default=None, help="eigenbasis truncation level")
    p.add_argument(
        "--galerkin-dim", type=int, default=DEFAULT_GALERKIN_DIM,
        help="dimension of the spline space for the eigenproblem",
    )


def _add_pivot_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--paths", type=int, default=10_000, help="pivotal simulation paths")
    p.add_argument("--steps", type=int, default=2048, help="Brownian grid size")
    p.add_argument("--pivot-seed", type=int, default=1, help="pivotal simulation seed")


def _add_delta_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--delta", type=float, help="relevance threshold")
    group.add_argument(
        "--delta-sweep", type=str,
        help="comma-separated thresholds, one decision per value",
    )


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--output", type=str, default=None, help="write JSON here instead of stdout")
    p.add_argument("--csv", type=str, default=None, help="also write diagnostics CSV here")


def _parse_deltas(args) -> list[float]:
    if args.delta is not None:
        deltas = [args.delta]
    else:
        try:
            deltas = [float(tok) for tok in args.delta_sweep.split(",") if tok.strip()]
        except ValueError as exc:
            raise ContractError(f"bad --delta-sweep value: {exc}") from exc
    if not deltas or any(d < 0 for d in deltas):
        raise ContractError("thresholds must be nonnegative")
    return deltas


def _parse_lambda(args) -> float | None:
    if isinstance(args.lam, str) and args.lam.lower() == "gcv":
        return None
    try:
        lam = float(args.lam)
    except ValueError as exc:
        raise ContractError(f"--lambda must be a number or 'gcv': {args.lam!r}") from exc
    if lam <= 0:
        raise ContractError("--lambda must be positive")
    return lam


def _quantile_table(args, alpha: float):
    config = PivotalConfig(
        nu0=args.nu0, Q=args.Q, n_paths=args.paths, n_steps=args.steps,
        seed=args.pivot_seed,
    )
    levels = tuple(sorted({1.0 - alpha, 1.0 - alpha / 2.0}))
    return cached_table(config, levels, _cache_dir())


def _emit(payload: dict, args) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_norms_csv(path: str, scheme: FractionScheme, norms) -> None:
    with open(path, "w") as fh:
        fh.write("q,nu,n,norm_sq\n")
        for q, (nu, n_q, d) in enumerate(
            zip(scheme.fractions, scheme.sizes, norms), start=1
        ):
            fh.write(f"{q},{nu:.17g},{n_q},{d:.17g}\n")


def _report_payload(reports: list) -> dict:
    if len(reports) == 1:
        return reports[0].to_dict()
    return {"decisions": [rep.to_dict() for rep in reports]}


def _validate_common(args) -> None:
    if not 0.0 < args.alpha < 1.0:
        raise ContractError("--alpha must lie in (0, 1)")
    if not 0.0 < args.nu0 < 1.0:
        raise ContractError("--nu0 must lie in (0, 1)")
    if args.Q < 1:
        raise ContractError("--Q must be positive")
    if getattr(args, "r", None) is not None and args.r < 1:
        raise ContractError("--r must be positive")
    if getattr(args, "grid", 101) < 9:
        raise ContractError("--grid must be at least 9")


def _fit_scalar_from_files(x_path, y_path, args):
    grid = Grid(args.grid)
    x = read_curves_csv(x_path, grid)
    y = read_scalars_csv(y_path)
    scheme = FractionScheme(len(x), args.nu0, args.Q)
    r = args.r if args.r is not None else default_truncation(len(x))
    sys_ = solve_eigen_scalar(empirical_covariance(x), r, args.galerkin_dim)
    fit = fit_scalar(x, y, sys_, scheme, _parse_lambda(args))
    return x, fit, sys_, r


def cmd_test_scalar(args) -> int:
    x, fit, sys_, r = _fit_scalar_from_files(args.x, args.y, args)
    stats = stats_one_sample_scalar(fit)
    qtable = _quantile_table(args, args.alpha)
    reports = [
        decide(stats, d, args.alpha, qtable, lambda_used=fit.lam, extra={"r": r})
        for d in _parse_deltas(args)
    ]
    _emit(_report_payload(reports), args)
    if args.csv:
        _emit_norms_csv(args.csv, fit.scheme, stats.norms_sq)
    return 0


def cmd_test_location(args) -> int:
    x, fit, sys_, r = _fit_scalar_from_files(args.x, args.y, args)
    beta_star = read_curves_csv(args.beta_star, Grid(args.grid))
    if len(beta_star) != 1:
        raise ContractError("beta_star file must hold exactly one curve")
    stats = stats_location(fit, sys_, beta_star[0])
    qtable = _quantile_table(args, args.alpha)
    reports = [
        decide(stats, d, args.alpha, qtable, lambda_used=fit.lam, extra={"r": r})
        for d in _parse_deltas(args)
    ]
    _emit(_report_payload(reports), args)
    if args.csv:
        _emit_norms_csv(args.csv, fit.scheme, stats.norms_sq)
    return 0


def cmd_test_two_sample(args) -> int:
    fits = []
    for x_path, y_path in ((args.x1, args.y1), (args.x2, args.y2)):
        x, fit, sys_, r = _fit_scalar_from_files(x_path, y_path, args)
        fits.append((fit, sys_, r))
    (fit1, sys1, r1), (fit2, sys2, r2) = fits
    stats = stats_two_sample(fit1, fit2, sys1, sys2)
    qtable = _quantile_table(args, args.alpha)
    extra = {"r": [r1, r2], "lambda_2": fit2.lam, "n_2": fit2.scheme.n}
    reports = [
        decide(stats, d, args.alpha, qtable, lambda_used=fit1.lam, extra=extra)
        for d in _parse_deltas(args)
    ]
    _emit(_report_payload(reports), args)
    if args.csv:
        _emit_norms_csv(args.csv, fit1.scheme, stats.norms_sq)
    return 0


def cmd_test_functional(args) -> int:
    grid = Grid(args.grid)
    x = read_curves_csv(args.x, grid)
    y = read_curves_csv(args.y, grid)
    scheme = FractionScheme(len(x), args.nu0, args.Q)
    r = args.r if args.r is not None else default_truncation(len(x))
    tsys = solve_eigen_functional(empirical_covariance(x), r, args.galerkin_dim)
    fit = fit_functional(x, y, tsys, scheme, _parse_lambda(args))
    stats = stats_functional(fit)
    qtable = _quantile_table(args, args.alpha)
    reports = [
        decide(stats, d, args.alpha, qtable, lambda_used=fit.lam, extra={"r": r})
        for d in _parse_deltas(args)
    ]
    _emit(_report_payload(reports), args)
    if args.csv:
        _emit_norms_csv(args.csv, fit.scheme, stats.norms_sq)
    return 0


def cmd_ci(args) -> int:
    if args.functional:
        grid = Grid(args.grid)
        x = read_curves_csv(args.x, grid)
        y = read_curves_csv(args.y, grid)
        scheme = FractionScheme(len(x), args.nu0, args.Q)
        r = args.r if args.r is not None else default_truncation(len(x))
        tsys = solve_eigen_functional(empirical_covariance(x), r, args.galerkin_dim)
        fit = fit_functional(x, y, tsys, scheme, _parse_lambda(args))
        stats = stats_functional(fit)
    else:
        x, fit, sys_, r = _fit_scalar_from_files(args.x, args.y, args)
        stats = stats_one_sample_scalar(fit)
    qtable = _quantile_table(args, args.alpha)
    one, two = confidence_intervals(stats, args.alpha, qtable)
    payload = {
        "T": stats.T,
        "V": stats.V,
        "alpha": args.alpha,
        "one_sided": list(one),
        "two_sided": list(two),
        "lambda": fit.lam,
        "r": r,
        "scheme": {"n": fit.scheme.n, "nu0": args.nu0, "Q": args.Q},
        "pivotal": qtable.config.to_dict(),
        "version": __version__,
    }
    _emit(payload, args)
    if args.csv:
        _emit_norms_csv(args.csv, fit.scheme, stats.norms_sq)
    return 0


def cmd_quantiles(args) -> int:
    from .pivotal import draw_pivotal, quantiles as make_table

    config = PivotalConfig(
        nu0=args.nu0, Q=args.Q, n_paths=args.paths, n_steps=args.steps,
        seed=args.pivot_seed,
    )
    levels = tuple(float(tok) for tok in args.levels.split(","))
    draws = draw_pivotal(config)
    table = make_table(draws, levels, config)
    _emit(table.to_dict(), args)
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("level,quantile\n")
            for level, value in sorted(table.quantiles.items()):
                fh.write(f"{level:.12g},{value:.17g}\n")
    if args.figures:
        from .figures import pivotal_figure

        out = Path(args.figures)
        out.parent.mkdir(parents=True, exist_ok=True)
        pivotal_figure(draws, table, out)
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = DgpSpec(
        slope=args.setting,
        predictor=args.predictor,
        n=args.n,
        noise_ratio=args.noise_ratio,
        seed=args.seed,
        grid_size=args.grid,
    )
    config = PivotalConfig(
        nu0=args.nu0, Q=args.Q, n_paths=args.paths, n_steps=args.steps,
        seed=args.pivot_seed,
    )
    levels = tuple(sorted({1.0 - args.alpha, 1.0 - args.alpha / 2.0}))
    qtable = cached_table(config, levels, _cache_dir())

    if args.coverage:
        result = run_coverage_experiment(
            spec, args.alpha, args.runs, (args.nu0, args.Q), qtable,
            r=args.r, galerkin_dim=args.galerkin_dim,
        )
        (out_dir / "coverage.json").write_text(
            json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
        )
        with (out_dir / "coverage.csv").open("w") as fh:
            fh.write("interval,coverage,se\n")
            fh.write(f"one_sided,{result.one_sided:.17g},{result.one_sided_se:.17g}\n")
            fh.write(f"two_sided,{result.two_sided:.17g},{result.two_sided_se:.17g}\n")
        sys.stdout.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
        return 0

    deltas = np.array(_parse_deltas(args))
    result = run_rejection_experiment(
        spec, deltas, args.alpha, args.runs, (args.nu0, args.Q), qtable,
        r=args.r, galerkin_dim=args.galerkin_dim,
    )
    (out_dir / "rejection.json").write_text(
        json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    with (out_dir / "rejection.csv").open("w") as fh:
        fh.write("delta,p_reject,se\n")
        for d, p, s in result.to_rows():
            fh.write(f"{d:.17g},{p:.17g},{s:.17g}\n")
    if not args.no_figures:
        from .figures import rejection_figure

        rejection_figure(result, out_dir / "rejection.png")
    sys.stdout.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relslope",
        description="Self-normalized relevant-hypothesis tests for slope "
        "functions in functional linear regression.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, deltas=True):
        _add_scheme_flags(p)
        _add_fit_flags(p)
        _add_pivot_flags(p)
        _add_output_flags(p)
        if deltas:
            _add_delta_flags(p)

    p = sub.add_parser("test-scalar", help="one-sample test, scalar responses")
    p.add_argument("x", help="CSV of predictor curves (rows = observations)")
    p.add_argument("y", help="CSV of scalar responses (one column)")
    common(p)
    p.set_defaults(func=cmd_test_scalar)

    p = sub.add_parser("test-functional", help="one-sample test, functional responses")
    p.add_argument("x", help="CSV of predictor curves")
    p.add_argument("y", help="CSV of response curves")
    common(p)
    p.set_defaults(func=cmd_test_functional)

    p = sub.add_parser("test-two-sample", help="two-sample slope-difference test")
    p.add_argument("x1")
    p.add_argument("y1")
    p.add_argument("x2")
    p.add_argument("y2")
    common(p)
    p.set_defaults(func=cmd_test_two_sample)

    p = sub.add_parser("test-location", help="test distance to a hypothesized slope")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("beta_star", help="CSV with one curve: the hypothesized slope")
    common(p)
    p.set_defaults(func=cmd_test_location)

    p = sub.add_parser("ci", help="confidence intervals for the squared slope norm")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--functional", action="store_true", help="functional responses")
    common(p, deltas=False)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("quantiles", help="simulate pivotal quantiles")
    p.add_argument("--nu0", type=float, default=0.5)
    p.add_argument("--Q", type=int, default=25)
    p.add_argument("--levels", type=str, default="0.9,0.95,0.99")
    _add_pivot_flags(p)
    _add_output_flags(p)
    p.add_argument("--figures", type=str, default=None, help="write a histogram PNG here")
    p.set_defaults(func=cmd_quantiles)

    p = sub.add_parser("simulate", help="Monte-Carlo experiments")
    p.add_argument("out_dir", help="directory for result files")
    p.add_argument("--setting", choices=["S1", "S2", "F1", "F2"], default="S1")
    p.add_argument("--predictor", choices=["fma1", "iid"], default="iid")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--runs", type=int, default=500)
    p.add_argument("--noise-ratio", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0, help="master experiment seed")
    p.add_argument("--coverage", action="store_true", help="coverage instead of rejection")
    p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
    _add_scheme_flags(p)
    _add_fit_flags(p)
    _add_pivot_flags(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--delta", type=float, default=None)
    group.add_argument("--delta-sweep", type=str, default=None)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "alpha"):
            _validate_common(args)
        if args.command == "simulate" and not args.coverage:
            if args.delta is None and args.delta_sweep is None:
                raise ContractError("simulate needs --delta or --delta-sweep")
        return args.func(args)
    except (ContractError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
