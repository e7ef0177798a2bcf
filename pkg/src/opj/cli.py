"""Command-line interface: ``opj analyze | simulate | strata``.

Errors are reported on stderr as a single ``error:<code>:<message>`` line;
malformed input exits with 2, estimation failures with 3.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from typing import Sequence

import numpy as np

from .core import as_estimand, read_experiment_csv
from .exceptions import OPJError
from .jackknife import JackknifeConfig, baseline_report, boundary_rule, imputation_jackknife, opj_run
from .regression import fit_control_model, predict
from .simulation import SCENARIOS, ReplicationFailed, ScenarioSpec, run_monte_carlo
from .stratify import assign, kde_fit

SEED_ENV = "OPJ_SEED"
DEFAULTS = {"k": 5, "buckets": 20, "deleted": 4, "iterations": 60, "alpha": 0.05, "seed": 0, "kde": "exact"}
SIM_SCENARIOS = tuple(SCENARIOS) + ("naive-psf",)


class UsageError(Exception):
    code = "UsageError"
    exit_code = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def fmt(v) -> str:
    """Six significant digits, the only float format this tool emits."""
    return f"{float(v):.6g}"


def _round(obj):
    if isinstance(obj, float):
        return float(fmt(obj))
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    return obj


def _add_jackknife_flags(p: argparse.ArgumentParser):
    p.add_argument("--k", type=int, help="number of strata (default 5)")
    p.add_argument("--buckets", type=int, help="number of buckets B (default 20)")
    p.add_argument("--deleted", type=int, help="buckets deleted per iteration D (default 4)")
    p.add_argument("--iterations", type=int, help="jackknife iterations M (default 60)")
    p.add_argument("--alpha", type=float, help="1 - confidence level (default 0.05)")
    p.add_argument("--seed", type=int, help=f"master seed (default ${SEED_ENV} or 0)")
    p.add_argument("--kde", choices=("exact", "binned"), help="KDE evaluation (default exact)")
    p.add_argument("--config", help="JSON file with defaults for the flags above")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opj", description="Out-of-bag post-stratified jackknife estimation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="estimate a treatment effect from a w,y,x1..xq CSV")
    a.add_argument("--data", required=True)
    a.add_argument("--method", choices=("opj", "base", "impute"), default="opj")
    a.add_argument("--estimand", choices=("difference", "ratio"), default="difference")
    a.add_argument("--out")
    a.add_argument("--trace-out", help="write per-iteration replicate rows (opj only)")
    a.add_argument("--impute-aggregate", choices=("unit", "mean"), default="unit",
                   help="impute ratio: average per-unit ratios (unit) or ratio of mean predictions (mean)")
    _add_jackknife_flags(a)

    s = sub.add_parser("simulate", help="run a Monte Carlo scenario and print a metrics table")
    s.add_argument("--scenario", required=True, help=f"one of {', '.join(SIM_SCENARIOS)}")
    s.add_argument("--estimand", choices=("difference", "ratio"), default="difference")
    s.add_argument("--reps", type=int, default=2000)
    s.add_argument("--n0", type=int, default=1000)
    s.add_argument("--n1", type=int, default=1000)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out")
    s.add_argument("--errors-out", help="write per-replication errors (rep,method,error)")
    s.add_argument("--impute-aggregate", choices=("unit", "mean"), default="mean",
                   help="impute ratio aggregation (default mean)")
    _add_jackknife_flags(s)

    t = sub.add_parser("strata", help="build strata on a CSV and export counts and plot data")
    t.add_argument("--data", required=True)
    t.add_argument("--rule", choices=("root-cum", "quantile", "class"), default="root-cum")
    t.add_argument("--psf", default="model",
                   help="score to stratify: 'model' (control-arm prediction), 'y', or 'x1'..'xq'")
    t.add_argument("--out")
    t.add_argument("--density-out", help="grid,density pairs of the KDE (root-cum only)")
    t.add_argument("--hist-out", help="histogram bins of the score")
    _add_jackknife_flags(t)
    return parser


def resolve_settings(args) -> dict:
    """Flags override the optional config file, which overrides built-in defaults."""
    settings = dict(DEFAULTS)
    env_seed = os.environ.get(SEED_ENV)
    if env_seed not in (None, ""):
        try:
            settings["seed"] = int(env_seed)
        except ValueError:
            raise UsageError(f"${SEED_ENV} must be an integer, got {env_seed!r}") from None
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def jackknife_config(settings: dict) -> JackknifeConfig:
    try:
        return JackknifeConfig(
            n_buckets=int(settings["buckets"]),
            n_deleted=int(settings["deleted"]),
            n_iter=int(settings["iterations"]),
            n_strata=int(settings["k"]),
            alpha=float(settings["alpha"]),
            seed=int(settings["seed"]),
            kde_method=settings["kde"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, path: str | None):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def cmd_analyze(args) -> int:
    settings = resolve_settings(args)
    cfg = jackknife_config(settings)
    data = read_experiment_csv(args.data)
    estimand = as_estimand(args.estimand)
    if args.method == "base":
        report = baseline_report(data, estimand, cfg.alpha)
    elif args.method == "impute":
        report = imputation_jackknife(data, estimand, cfg, args.impute_aggregate)
    else:
        result = opj_run(data, estimand, cfg)
        report = result.report
        if args.trace_out:
            rows = [
                (t.iteration, " ".join(map(str, t.deleted)), fmt(t.estimate), t.merges, t.strata_used)
                for t in result.traces
            ]
            _emit(_csv(("m", "deleted_buckets", "estimate", "merges", "strata"), rows), args.trace_out)
    out = report.to_dict()
    out.update(n=data.n, n0=data.n0, n1=data.n1)
    _emit(json.dumps(_round(out), indent=2) + "\n", args.out)
    return 0


def cmd_simulate(args) -> int:
    if args.scenario not in SIM_SCENARIOS:
        raise UsageError(f"unknown scenario {args.scenario!r}; expected one of {', '.join(SIM_SCENARIOS)}")
    settings = resolve_settings(args)
    cfg = jackknife_config(settings)
    if args.scenario == "naive-psf":
        dgp, methods = "quad-quad", ("opj", "naive-x1", "naive-x2", "naive-x3")
    else:
        dgp, methods = args.scenario, ("base", "impute", "opj")
    try:
        spec = ScenarioSpec.named(dgp, estimand=args.estimand, n0=args.n0, n1=args.n1,
                                  reps=args.reps, seed=cfg.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    result = run_monte_carlo(spec, methods, cfg, n_jobs=args.threads, impute_aggregate=args.impute_aggregate)
    rows = []
    for method in methods:
        m = result.metrics[method]
        rows.append((args.scenario, spec.estimand.value, method, fmt(m.mean_bias), fmt(m.mean_se),
                     fmt(m.rmse), fmt(m.coverage), m.reps, cfg.seed))
    header = ("scenario", "estimand", "method", "mean_bias", "mean_se", "rmse", "coverage", "reps", "seed")
    _emit(_csv(header, rows), args.out)
    if args.errors_out:
        err_rows = [
            (rep, method, fmt(e))
            for method in methods
            for rep, e in enumerate(result.errors(method))
        ]
        _emit(_csv(("rep", "method", "error"), err_rows), args.errors_out)
    return 0


def _score(data, name: str) -> np.ndarray:
    if name == "model":
        return predict(fit_control_model(data), data)
    if name == "y":
        return np.asarray(data.y)
    if name.startswith("x") and name[1:].isdigit() and 1 <= int(name[1:]) <= data.q:
        return np.asarray(data.x[:, int(name[1:]) - 1])
    raise UsageError(f"--psf must be 'model', 'y' or x1..x{data.q}, got {name!r}")


def cmd_strata(args) -> int:
    settings = resolve_settings(args)
    data = read_experiment_csv(args.data)
    score = _score(data, args.psf)
    K = int(settings["k"])
    if K < 1:
        raise UsageError("--k must be >= 1")
    bounds = boundary_rule(args.rule, settings["kde"])(score, K)
    a = assign(bounds, score, data.w)
    rows = [
        (k + 1, fmt(bounds.cuts[k]), fmt(bounds.cuts[k + 1]), a.n[k], a.n0[k], a.n1[k])
        for k in range(bounds.K)
    ]
    _emit(_csv(("stratum", "lower", "upper", "n", "n0", "n1"), rows), args.out)
    if args.density_out:
        if args.rule != "root-cum":
            raise UsageError("--density-out is only available with --rule root-cum")
        kde = kde_fit(score, method=settings["kde"])
        _emit(_csv(("grid", "density"), [(fmt(g), fmt(d)) for g, d in zip(kde.grid, kde.density)]),
              args.density_out)
    if args.hist_out:
        counts, edges = np.histogram(score, bins="auto")
        _emit(_csv(("bin_left", "bin_right", "count"),
                   [(fmt(edges[i]), fmt(edges[i + 1]), int(c)) for i, c in enumerate(counts)]),
              args.hist_out)
    return 0


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "strata": cmd_strata}


def _fail(code: str, message: str, exit_code: int) -> int:
    one_line = " ".join(str(message).split())
    print(f"error:{code}:{one_line}", file=sys.stderr)
    return exit_code


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(exc.code, str(exc), exc.exit_code)
    except OPJError as exc:
        return _fail(exc.code, str(exc), exc.exit_code)
    except ReplicationFailed as exc:
        return _fail(getattr(exc.cause, "code", "ReplicationFailed"), str(exc), 3)
    except OSError as exc:
        return _fail("FileError", str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
