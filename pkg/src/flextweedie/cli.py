"""Batch command-line front end.

Subcommands: ``fit`` (CSV in, JSON out), ``density`` (single point, for
debugging), ``simulate`` (CSV of draws) and ``study`` (full Monte-Carlo
scenario, summary CSV out).

Exit codes: 0 success, 1 input/domain error, 2 fit did not converge (the
result file is still written, with converged=false). JSON output uses a
canonical key order and 17-significant-digit numbers so files can be
compared byte for byte.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np
import scipy.stats

from . import core, density, simulate
from .core import TweedieParams
from .exceptions import (
    ConfigError,
    DomainError,
    InvalidInput,
    NoConvergence,
    SupportViolation,
    TweedieError,
    UnsupportedPower,
)
from .mle import fit_mle_profile
from .pseudo import fit_pseudo_newton
from .quasi import fit_modified_chaser

_FITTERS = {"mle": fit_mle_profile, "qmle": fit_modified_chaser, "pmle": fit_pseudo_newton}


def _json_scalar(value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v) or math.isinf(v):
            return "null"
        return format(v, ".17g")
    if isinstance(value, str):
        return json.dumps(value)
    raise TypeError(f"cannot serialize {type(value)!r}")


def to_json(obj, indent: int = 0) -> str:
    """Serialize with sorted keys and 17-significant-digit floats."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [
            f"{inner}{json.dumps(str(k))}: {to_json(obj[k], indent + 1)}"
            for k in sorted(obj)
        ]
        return "{\n" + ",\n".join(parts) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            return "[]"
        parts = [f"{inner}{to_json(v, indent + 1)}" for v in items]
        return "[\n" + ",\n".join(parts) + f"\n{pad}]"
    return _json_scalar(obj)


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def cmd_fit(args) -> int:
    try:
        data = core.load_csv(args.data, args.response, args.covariates.split(","),
                             intercept=not args.no_intercept)
    except (InvalidInput, OSError, ValueError) as err:
        return _fail(str(err))
    method = args.method
    theta0 = None
    try:
        theta0 = core.initial_theta(data, method.upper())
        if args.start_power is not None:
            theta0 = theta0.replace(power=args.start_power)
        if args.start_delta is not None:
            theta0 = theta0.replace(delta=args.start_delta)
    except TweedieError as err:
        return _fail(f"could not build starting values: {err}")
    exit_code = 0
    try:
        result = _FITTERS[method](data, theta0)
    except NoConvergence as err:
        if err.result is None:
            return _fail(str(err))
        print(f"warning: {err}", file=sys.stderr)
        result = err.result
        exit_code = 2
    except TweedieError as err:
        return _fail(str(err))
    names = result.parameter_names(data)
    payload = {
        "method": method,
        "coefficients": [
            {"name": names[j], "estimate": result.theta.beta[j], "se": result.se[j]}
            for j in range(data.q)
        ],
        "delta": result.theta.delta,
        "delta_se": result.se[data.q],
        "phi": result.theta.phi,
        "power": result.theta.power,
        "power_se": result.se[data.q + 1],
        "vcov": [list(row) for row in result.vcov],
        "converged": result.converged,
        "iterations": result.iterations,
    }
    if method == "mle":
        payload["loglik"] = result.loglik
    Path(args.out).write_text(to_json(payload) + "\n", encoding="utf-8")
    return exit_code


def cmd_density(args) -> int:
    try:
        params = TweedieParams(mu=args.mu, phi=args.phi, power=args.power)
        value = density.log_density(args.y, params)
    except (DomainError, SupportViolation, InvalidInput, TweedieError) as err:
        return _fail(str(err))
    p = args.power
    report = None
    if 1.0 < p < 2.0 and args.y > 0:
        _, report = density.log_density_series_compound(args.y, params)
        path = "compound Poisson series"
    elif p > 2.0 and p != 3.0:
        _, report = density.log_density_series_positive_stable(args.y, params)
        path = "positive stable series"
    elif 1.0 < p < 2.0:
        path = "probability mass at zero"
    else:
        path = {0.0: "gaussian", 1.0: "scaled poisson", 2.0: "gamma",
                3.0: "inverse gaussian"}.get(p, "closed form")
    print(f"log_density = {format(value, '.17g')}")
    print(f"path = {path}")
    if report is not None:
        print(f"k_peak = {report.k_peak}")
        print(f"terms_used = {report.terms_used}")
        print(f"lower_k = {report.lower_k}")
        print(f"upper_k = {report.upper_k}")
        print(f"converged = {str(report.converged).lower()}")
        print(f"log_sum = {format(report.log_sum, '.17g')}")
    return 0


def cmd_simulate(args) -> int:
    try:
        params = TweedieParams(mu=args.mu, phi=args.phi, power=args.power)
        draws = simulate.rtweedie(params, args.n, args.seed)
    except (UnsupportedPower, InvalidInput) as err:
        return _fail(str(err))
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["y"])
        for v in draws:
            writer.writerow([repr(float(v))])
    return 0


def _config_from_file(path: str) -> simulate.ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(str(err)) from err
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"malformed config {path}: line {err.lineno}, column {err.colno}: {err.msg}"
        ) from err
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    known = {"preset", "n", "beta", "power", "phi", "n_reps", "seed", "generator",
             "df", "heavy_tail_dispersion", "methods", "nominal_level"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    required = {"n", "n_reps", "seed"}
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"missing config field(s): {', '.join(sorted(missing))}")
    preset = raw.pop("preset", None)
    for key in ("beta", "methods"):
        if key in raw:
            raw[key] = tuple(raw[key])
    try:
        if preset is not None:
            return simulate.ScenarioConfig.from_preset(
                preset, n=raw.pop("n"), n_reps=raw.pop("n_reps"), seed=raw.pop("seed"),
                **raw)
        missing = {"beta", "power", "phi"} - set(raw)
        if missing:
            raise ConfigError(
                f"missing config field(s): {', '.join(sorted(missing))} (or use a preset)"
            )
        return simulate.ScenarioConfig(**raw)
    except TypeError as err:
        raise ConfigError(f"bad config: {err}") from err


def cmd_study(args) -> int:
    try:
        config = _config_from_file(args.config)
    except ConfigError as err:
        return _fail(str(err))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    study = simulate.run_study(config)
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["method", "param", "bias", "emp_sd", "mean_se", "coverage",
                         "efficiency", "n_converged"])
        for row in study.rows:
            writer.writerow([
                row.method, row.param, repr(row.mean_bias), repr(row.empirical_sd),
                repr(row.mean_se), repr(row.coverage_rate), repr(row.efficiency),
                row.n_converged,
            ])
    if args.raw:
        z = float(scipy.stats.norm.ppf(0.5 * (1.0 + config.nominal_level)))
        with open(out_dir / "raw.csv", "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["rep", "method", "param", "estimate", "se", "ci_lo",
                             "ci_hi", "converged"])
            for rec in study.replicates:
                for j, param in enumerate(study.param_names):
                    est, se = rec.estimates[j], rec.se[j]
                    writer.writerow([
                        rec.rep, rec.method, param, repr(est), repr(se),
                        repr(est - z * se), repr(est + z * se),
                        str(rec.converged).lower(),
                    ])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flextweedie",
        description="Tweedie regression: exact, quasi- and pseudo-likelihood fitting",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit a model from a CSV file")
    fit.add_argument("--data", required=True)
    fit.add_argument("--response", required=True)
    fit.add_argument("--covariates", required=True,
                     help="comma-separated covariate column names")
    fit.add_argument("--no-intercept", action="store_true")
    fit.add_argument("--method", required=True, choices=sorted(_FITTERS))
    fit.add_argument("--start-power", type=float, default=None)
    fit.add_argument("--start-delta", type=float, default=None)
    fit.add_argument("--out", required=True)
    fit.set_defaults(func=cmd_fit)

    dens = sub.add_parser("density", help="evaluate one log density")
    dens.add_argument("--mu", type=float, required=True)
    dens.add_argument("--phi", type=float, required=True)
    dens.add_argument("--power", type=float, required=True)
    dens.add_argument("--y", type=float, required=True)
    dens.set_defaults(func=cmd_density)

    sim = sub.add_parser("simulate", help="draw Tweedie variates to CSV")
    sim.add_argument("--mu", type=float, required=True)
    sim.add_argument("--phi", type=float, required=True)
    sim.add_argument("--power", type=float, required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    study = sub.add_parser("study", help="run a Monte-Carlo study from a config file")
    study.add_argument("--config", required=True)
    study.add_argument("--out-dir", required=True)
    study.add_argument("--raw", action="store_true",
                       help="also write per-replicate raw results")
    study.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
