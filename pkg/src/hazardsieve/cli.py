"""Command-line entry point: ``hazardsieve {fit,cv,validate,simulate,replicate,combine-pvalues}``.

Exit codes: 0 success, 1 input error (one line on stderr), 2 fit did not
converge (JSON is still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataError, load_dataset, validate, write_dataset
from .estimator import (
    BasisConfig,
    CVSpec,
    FitConfig,
    NoWeightedEventsError,
    bic,
    cauchy_combine,
    cv_bandwidth,
    fit,
    wald,
)
from .kernel import KernelSpec
from .simulate import METHODS, SimConfig, calibrate_censoring, gen_dataset, run_study

SEED_ENV = "HAZARDSIEVE_SEED"
ALPHA_POINTS = 101


class InputError(Exception):
    """Bad command-line input; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(message)


@dataclass
class RunManifest:
    command: str
    flags: dict
    seed: int | None
    version: str = __version__
    timing: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def sig(x, digits: int = 6):
    """Round to ``digits`` significant digits; None and non-finite map to None."""
    if x is None:
        return None
    x = float(x)
    if not np.isfinite(x):
        return None
    return float(f"{x:.{digits}g}")


def _sig_list(a):
    return None if a is None else [sig(v) for v in np.asarray(a, dtype=float).ravel()]


def _fmt(x, digits: int = 6) -> str:
    if x is None or not np.isfinite(x):
        return "NA"
    return f"{x:.{digits}g}"


def resolve_seed(seed):
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return seed


def parse_reals(text: str, what: str) -> tuple:
    """Comma-separated reals; fractions like ``1/3`` are accepted."""
    try:
        vals = tuple(float(Fraction(v.strip())) for v in text.split(",") if v.strip())
    except (ValueError, ZeroDivisionError):
        raise InputError(f"cannot parse {what}: {text!r}") from None
    if not vals:
        raise InputError(f"{what} is empty")
    return vals


def _basis_config(args) -> BasisConfig:
    if args.interior_knots is not None and args.num_knots is not None:
        raise InputError("use either --interior-knots or --num-knots, not both")
    knots = parse_reals(args.interior_knots, "--interior-knots") if args.interior_knots else None
    return BasisConfig(order=args.spline_order, interior_knots=knots, num_knots=args.num_knots,
                       natural=args.natural)


def _bandwidth(args, seed):
    if args.cv:
        if args.h is not None:
            raise InputError("use either --h or --cv, not both")
        grid = parse_reals(args.grid, "--grid") if args.grid else None
        return CVSpec(grid=grid, folds=args.folds, seed=0 if seed is None else seed)
    if args.grid:
        raise InputError("--grid requires --cv")
    return args.h


def _load(args):
    if not args.survival:
        raise InputError("--survival is required")
    if not args.longitudinal:
        raise InputError("--longitudinal is required")
    for p in (args.survival, args.longitudinal):
        if not Path(p).is_file():
            raise InputError(f"no such file: {p}")
    return load_dataset(args.survival, args.longitudinal, tau=args.tau)


def _fit_payload(data, result) -> dict:
    t = np.linspace(0.0, data.tau, ALPHA_POINTS)
    out = {
        "s": sig(result.s),
        "beta": _sig_list(result.beta_hat),
        "se": None,
        "z": None,
        "p": None,
        "ci_lo": None,
        "ci_hi": None,
        "loglik": sig(result.loglik),
        "bic": sig(bic(result, data)),
        "h_used": sig(result.h_used),
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "alpha_curve": {"t": _sig_list(t), "alpha": _sig_list(result.alpha(t))},
    }
    if result.se is not None:
        try:
            tab = wald(result)
        except ValueError as exc:
            out["variance_error"] = str(exc)
        else:
            out.update(se=_sig_list(tab.se), z=_sig_list(tab.z), p=_sig_list(tab.p),
                       ci_lo=_sig_list(tab.ci_lo), ci_hi=_sig_list(tab.ci_hi))
    elif "variance_error" in result.diagnostics:
        out["variance_error"] = str(result.diagnostics["variance_error"])
    warnings = result.diagnostics.get("warnings")
    if warnings:
        out["warnings"] = list(warnings)
    cv = result.diagnostics.get("cv")
    if cv is not None:
        out["cv"] = _cv_payload(cv)
    return out


def _cv_payload(report) -> dict:
    return {
        "grid": _sig_list(report.grid),
        "mean_loss": _sig_list(report.mean_loss),
        "chosen_h": sig(report.chosen_h),
        "folds": int(report.fold_count),
    }


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _manifest_path(out: str | None, explicit: str | None):
    if explicit:
        return explicit
    return f"{out}.manifest.json" if out else None


def _write_manifest(manifest: RunManifest, out, explicit):
    path = _manifest_path(out, explicit)
    if path:
        Path(path).write_text(manifest.to_json() + "\n", encoding="utf-8")


def _flags(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}


def cmd_fit(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load(args)
    basis_cfg = _basis_config(args)
    bw = _bandwidth(args, seed)
    s_values = parse_reals(args.s_grid, "--s-grid") if args.s_grid else (args.s,)
    t0 = time.perf_counter()
    fits = []
    for s in s_values:
        cfg = FitConfig(s=s, bandwidth=bw, basis=basis_cfg, kernel=KernelSpec.from_name(args.kernel))
        res = fit(data, cfg)
        fits.append((res, _fit_payload(data, res)))
    if len(fits) == 1:
        res, payload = fits[0]
        converged = res.converged
    else:
        bics = [bic(r, data) for r, _ in fits]
        best = int(np.argmin(bics))
        payload = {"selected_s": sig(s_values[best]), "fits": [p for _, p in fits]}
        converged = all(r.converged for r, _ in fits)
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    _write_manifest(RunManifest("fit", _flags(args), seed, timing={"seconds": time.perf_counter() - t0}),
                    args.out, args.manifest)
    return 0 if converged else 2


def cmd_cv(args) -> int:
    seed = resolve_seed(args.seed)
    data = _load(args)
    basis_cfg = _basis_config(args)
    grid = parse_reals(args.grid, "--grid") if args.grid else None
    cfg = FitConfig(s=args.s, bandwidth=None, basis=basis_cfg, kernel=KernelSpec.from_name(args.kernel))
    t0 = time.perf_counter()
    report = cv_bandwidth(data, cfg, grid=grid, folds=args.folds, seed=0 if seed is None else seed)
    _emit(json.dumps(_cv_payload(report), indent=2) + "\n", args.out)
    _write_manifest(RunManifest("cv", _flags(args), seed, timing={"seconds": time.perf_counter() - t0}),
                    args.out, args.manifest)
    return 0


def cmd_validate(args) -> int:
    data = _load(args)
    _emit(validate(data, args.h).to_json() + "\n", args.out)
    return 0


def _sim_config(args, seed) -> SimConfig:
    if args.n < 1:
        raise InputError("--n must be >= 1")
    return SimConfig(s=args.s, n=args.n, censor_target=args.censor, seed=0 if seed is None else seed)


def cmd_simulate(args) -> int:
    seed = resolve_seed(args.seed)
    cfg = _sim_config(args, seed)
    t0 = time.perf_counter()
    cfg = replace(cfg, c_lower=calibrate_censoring(cfg, seed=cfg.seed))
    data = gen_dataset(cfg, np.random.default_rng(cfg.seed))
    stem = args.out
    write_dataset(data, f"{stem}_survival.csv", f"{stem}_longitudinal.csv")
    manifest = RunManifest("simulate", _flags(args), seed,
                           timing={"seconds": time.perf_counter() - t0})
    manifest.flags["c_lower"] = cfg.c_lower
    _write_manifest(manifest, stem, args.manifest)
    return 0


def report_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "coef", "RB", "ESE", "SE", "CP", "failures"])
    for rep in reports.values():
        for row in rep.rows():
            w.writerow([row["method"], row["coef"], _fmt(row["RB"]), _fmt(row["ESE"]), _fmt(row["SE"]),
                        "NA" if not np.isfinite(row["CP"]) else f"{row['CP']:.1f}", row["failures"]])
    return buf.getvalue()


def cmd_replicate(args) -> int:
    seed = resolve_seed(args.seed)
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise InputError(f"unknown method(s) {unknown}; choose from {', '.join(METHODS)}")
    if args.reps < 1:
        raise InputError("--reps must be >= 1")
    cfg = _sim_config(args, seed)
    threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
    if threads < 1:
        raise InputError("--threads must be >= 1")
    t0 = time.perf_counter()
    reports = run_study(cfg, args.reps, methods, master_seed=cfg.seed, threads=threads)
    _emit(report_csv(reports), args.out)
    meta = next(iter(reports.values())).metadata
    manifest = RunManifest("replicate", _flags(args), seed, timing={"seconds": time.perf_counter() - t0})
    manifest.flags["c_lower"] = meta.get("c_lower")
    _write_manifest(manifest, args.out, args.manifest)
    return 0


def cmd_combine(args) -> int:
    print(_fmt(cauchy_combine(args.pvalues)))
    return 0


def _add_data(p):
    p.add_argument("--survival", help="CSV with columns id,time,status")
    p.add_argument("--longitudinal", help="CSV with columns id,obs_time,z1..zp")
    p.add_argument("--tau", type=float, default=None, help="end of study (default: largest follow-up)")


def _add_model(p):
    p.add_argument("--s", type=float, default=0.0, help="Box-Cox parameter (0 = proportional hazards)")
    p.add_argument("--spline-order", type=int, default=3)
    p.add_argument("--interior-knots", default=None, help='e.g. "1/3,2/3"')
    p.add_argument("--num-knots", type=int, default=None, help="number of quantile knots of follow-up times")
    p.add_argument("--natural", action="store_true", help="natural-spline constraint at both boundaries")
    p.add_argument("--kernel", default="epanechnikov", choices=["epanechnikov"])
    p.add_argument("--seed", type=int, default=0)


def _add_out(p, required=False):
    p.add_argument("--out", required=required, default=None)
    p.add_argument("--manifest", default=None, help="manifest path (default: <out>.manifest.json)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hazardsieve", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hazardsieve {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the kernel-weighted sieve model")
    _add_data(p)
    _add_model(p)
    p.add_argument("--s-grid", default=None, help='sweep over s, e.g. "0,0.5,1"; selects by BIC')
    p.add_argument("--h", type=float, default=None, help="bandwidth (default n^-0.4)")
    p.add_argument("--cv", action="store_true", help="choose the bandwidth by cross-validation")
    p.add_argument("--grid", default=None, help="CV bandwidth grid")
    p.add_argument("--folds", type=int, default=5)
    _add_out(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cv", help="cross-validated bandwidth selection")
    _add_data(p)
    _add_model(p)
    p.add_argument("--grid", default=None)
    p.add_argument("--folds", type=int, default=5)
    _add_out(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("validate", help="summarize a dataset")
    _add_data(p)
    p.add_argument("--h", type=float, default=None, help="bandwidth for the zero-weight event check")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="draw one dataset from the simulation design")
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--censor", type=float, default=0.2, choices=[0.2, 0.3])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="path stem; writes <out>_survival.csv and <out>_longitudinal.csv")
    p.add_argument("--manifest", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate", help="Monte Carlo study table")
    p.add_argument("--s", type=float, default=0.0)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--censor", type=float, default=0.2, choices=[0.2, 0.3])
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--methods", default="smkle04")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: all cores)")
    _add_out(p)
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("combine-pvalues", help="Cauchy combination of p-values")
    p.add_argument("pvalues", nargs="+", type=float)
    p.set_defaults(func=cmd_combine)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise InputError("missing command; see --help")
        return args.func(args)
    except (InputError, DataError, NoWeightedEventsError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"hazardsieve: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
