"""Command-line front end.  Data goes to stdout (or --out); diagnostics to stderr."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys

import numpy as np

from . import limits, validation
from .graph import PercolationConfig, percolate
from .urn import UrnConfig, martingale_transform, scale_trace, urn_run

log = logging.getLogger("erperc")

FIGURES = ("urn-ensemble", "threshold-curve")
CHECKS = ("equivalence", "hitting", "hitting-reflected", "conditions", "failure")


class UsageError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _add_model_flags(p, n=100, c=1.6):
    p.add_argument("--n", type=int, default=n, help="balls in urn 1 / vertices minus one")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--c", type=float, default=None, help=f"mean degree c = n p (default {c} when --p is absent)")
    group.add_argument("--p", type=float, default=None, help="edge / move probability")
    p.set_defaults(default_c=c)


def _add_io_flags(p, fmt):
    p.add_argument("--out", default="-", help="output file, '-' for stdout")
    p.add_argument("--format", choices=("csv", "json"), default=fmt, help="output format")


def _add_seed(p):
    p.add_argument("--seed", type=int, default=0, help="64-bit base seed")


def _add_runs(p, runs, workers=True):
    p.add_argument("--runs", type=int, default=runs, help="independent runs; run i uses stream id i")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="worker processes; output does not depend on it")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="erperc", description=__doc__, formatter_class=fmt)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("simulate-graph", help="one percolation trace", formatter_class=fmt)
    _add_model_flags(p)
    _add_seed(p)
    p.add_argument("--stream", type=int, default=0, help="stream id")
    _add_io_flags(p, "csv")

    p = sub.add_parser("simulate-urn", help="one urn trace", formatter_class=fmt)
    _add_model_flags(p)
    _add_seed(p)
    p.add_argument("--stream", type=int, default=0, help="stream id")
    p.add_argument("--view", choices=("raw", "scaled", "martingale"), default="raw", help="counts, k/n-rescaled path, or martingale transform")
    _add_io_flags(p, "csv")

    p = sub.add_parser("ensemble", help="ensemble statistics", formatter_class=fmt)
    p.add_argument("--model", choices=("urn", "graph"), default="urn", help="simulator")
    _add_model_flags(p)
    _add_runs(p, 1000)
    _add_seed(p)
    p.add_argument("--horizon", type=int, default=None, help="stop every run after this many steps")
    p.add_argument("--exhaustions-out", default=None, help="also write run_index,scaled_time,is_giant CSV here")
    _add_io_flags(p, "csv")

    p = sub.add_parser("density", help="Gaussian level-crossing law", formatter_class=fmt)
    _add_model_flags(p)
    p.add_argument("--level-A", type=float, default=0.5, dest="level_A", help="crossing level in (0, 1)")
    p.add_argument("--points", type=int, default=201, help="grid size for csv output")
    _add_io_flags(p, "json")

    p = sub.add_parser("threshold", help="root of exp(-c a) = 1 - a", formatter_class=fmt)
    p.add_argument("--c", type=float, required=True, help="mean degree c > 0")
    p.add_argument("--tol", type=float, default=1e-12, help="maximum allowed residual")
    _add_io_flags(p, "json")

    p = sub.add_parser("exhaustion-law", help="law of the giant-component exhaustion time", formatter_class=fmt)
    _add_model_flags(p, n=400, c=2.0)
    _add_io_flags(p, "json")

    p = sub.add_parser("validate", help="Monte Carlo checks of the limit claims", formatter_class=fmt)
    p.add_argument("--check", choices=CHECKS, default="equivalence", help="which check to run")
    _add_model_flags(p)
    _add_runs(p, 5000)
    _add_seed(p)
    _add_io_flags(p, "json")

    p = sub.add_parser("figure", help="datasets behind the two figures", formatter_class=fmt)
    p.add_argument("name", choices=FIGURES, help="dataset to emit")
    _add_model_flags(p)
    _add_runs(p, 100, workers=False)
    p.add_argument("--seed", type=int, default=1, help="64-bit base seed")
    _add_io_flags(p, "csv")
    for name, sp in sub.choices.items():
        sp.set_defaults(parser=sp)
    return parser


def _resolve_c(args) -> float:
    if getattr(args, "p", None) is not None:
        if not 0.0 < args.p <= 1.0:
            raise UsageError("--p: must lie in (0, 1]")
        return args.n * args.p
    c = args.c if args.c is not None else args.default_c
    if not c > 0:
        raise UsageError("--c: must be positive")
    return c


def _validate(args):
    if hasattr(args, "n") and args.n < 1:
        raise UsageError("--n: must be a positive integer")
    if hasattr(args, "seed") and not 0 <= args.seed < 2**64:
        raise UsageError("--seed: must be a 64-bit unsigned integer")
    if getattr(args, "stream", 0) < 0 or getattr(args, "stream", 0) >= 2**64:
        raise UsageError("--stream: must be a 64-bit unsigned integer")
    if hasattr(args, "runs") and args.runs < 1:
        raise UsageError("--runs: must be positive")
    if getattr(args, "workers", 1) < 1:
        raise UsageError("--workers: must be positive")
    for flag, path in (("--out", args.out), ("--exhaustions-out", getattr(args, "exhaustions_out", None))):
        if path in (None, "-"):
            continue
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent) or not os.access(parent, os.W_OK) or (os.path.exists(path) and not os.access(path, os.W_OK)):
            raise UsageError(f"{flag}: cannot write to {path}")
    if args.subcommand == "threshold":
        if not args.c > 0:
            raise UsageError("--c: must be positive")
        if not args.tol > 0:
            raise UsageError("--tol: must be positive")
        return
    if args.subcommand == "figure" and args.name == "threshold-curve":
        return
    c = _resolve_c(args)
    args.c_value = c
    args.p_value = c / args.n
    if args.p_value > 1:
        raise UsageError("--c: c / n must not exceed 1")
    if args.subcommand == "density" and not 0 < args.level_A < 1:
        raise UsageError("--level-A: must lie in (0, 1)")
    if args.subcommand == "density" and args.points < 2:
        raise UsageError("--points: must be at least 2")
    if args.subcommand == "exhaustion-law" and not c > 1:
        raise UsageError("--c: the exhaustion law needs c > 1")
    if args.subcommand == "validate":
        if args.check.startswith("hitting") and not c > 1:
            raise UsageError("--c: hitting checks need c > 1")
        if args.check == "equivalence" and (args.n < 10 or args.runs < 1000):
            raise UsageError("--runs: equivalence needs --n >= 10 and --runs >= 1000")
    if args.subcommand == "ensemble" and args.horizon is not None and args.horizon < 1:
        raise UsageError("--horizon: must be positive")


def cmd_simulate_graph(args) -> str:
    trace = percolate(PercolationConfig(args.n + 1, args.p_value, args.seed, args.stream))
    if args.format == "json":
        cols = ("k", "not_visited", "visited_not_transmitted", "visited_transmitted", "newly_visited", "reseed")
        body = {name: [int(x) for x in getattr(trace, name)] for name in cols}
        body["exhaustion_steps"] = trace.exhaustion_steps
        return _dumps(body)
    return trace.to_csv()


def cmd_simulate_urn(args) -> str:
    config = UrnConfig(args.n, args.p_value, args.seed, args.stream)
    trace = urn_run(config)
    if args.view == "scaled":
        view = scale_trace(trace, config)
        if args.format == "json":
            return _dumps({"alpha": view.alpha.tolist(), "s": view.s.tolist()})
        return view.to_csv()
    if args.view == "martingale":
        view = martingale_transform(trace, config)
        if args.format == "json":
            return _dumps({"k": view.k.tolist(), "t": view.t.tolist()})
        return view.to_csv()
    if args.format == "json":
        return _dumps({"u": trace.u.tolist(), "moved": trace.moved.tolist()})
    return trace.to_csv()


def ensemble_config(args) -> validation.EnsembleConfig:
    if args.model == "urn":
        sim = UrnConfig(args.n, args.p_value)
    else:
        sim = PercolationConfig(args.n + 1, args.p_value)
    return validation.EnsembleConfig(
        runs=args.runs,
        base_seed=args.seed,
        sim_params=sim,
        record=frozenset({"exhaustions", "martingale", "scaled"}),
        horizon=args.horizon,
    )


def cmd_ensemble(args) -> str:
    cfg = ensemble_config(args)
    log.info("running %d %s runs on %d worker(s)", cfg.runs, cfg.model, args.workers)
    summary = validation.run_ensemble(cfg, workers=args.workers)
    if args.exhaustions_out:
        first = np.round(np.asarray(summary.exhaustion_samples) * cfg.n).astype(np.int64)
        _write(args.exhaustions_out, validation.exhaustion_samples_csv(first, cfg.n, cfg.c))
    return summary.to_json() + "\n" if args.format == "json" else summary.to_csv()


def cmd_density(args) -> str:
    params = limits.LimitParams(args.n, args.c_value)
    law = limits.hitting_law(args.level_A, params)
    if args.format == "json":
        return law.to_json(params) + "\n"
    t = np.linspace(max(0.0, law.alpha0 - 6 * law.sd), law.alpha0 + 6 * law.sd, args.points)
    dens = limits.hitting_density(t, law, params)
    return _rows_csv(["t", "density"], [(repr(float(a)), repr(float(b))) for a, b in zip(t, dens)])


def cmd_threshold(args) -> str:
    sol = limits.solve_threshold(args.c, args.tol)
    if args.format == "json":
        return sol.to_json() + "\n"
    return _rows_csv(["c", "alpha_star", "subcritical", "residual"], [(repr(sol.c), repr(sol.alpha_star), int(sol.subcritical), repr(sol.residual))])


def cmd_exhaustion_law(args) -> str:
    params = limits.LimitParams(args.n, args.c_value)
    law = limits.giant_exhaustion_law(params.c, params.n)
    if args.format == "json":
        return law.to_json(params) + "\n"
    return _rows_csv(["c", "n", "A", "alpha0", "sd"], [(repr(params.c), params.n, repr(law.level_A), repr(law.alpha0), repr(law.sd))])


def cmd_validate(args) -> str:
    c, n = args.c_value, args.n
    if args.check == "equivalence":
        body = json.loads(validation.graph_urn_equivalence(n, c, args.runs, args.seed, workers=args.workers).to_json())
    elif args.check in ("hitting", "hitting-reflected"):
        report = validation.hitting_law_check(c, n, args.runs, args.seed, reflected=args.check == "hitting-reflected", workers=args.workers)
        body = json.loads(report.to_json())
    elif args.check == "conditions":
        body = validation.martingale_clt_diagnostics(n, c, args.runs, args.seed, workers=args.workers)
    else:
        cfg = validation.EnsembleConfig(args.runs, args.seed, UrnConfig(n, args.p_value), record=frozenset({"exhaustions"}), horizon=n + 2)
        summary = validation.run_ensemble(cfg, workers=args.workers)
        rate = summary.failure_fraction
        lo, hi = validation.binomial_band(rate, 100)
        body = {
            "n": n,
            "c": c,
            "runs": args.runs,
            "seed": args.seed,
            "failure_fraction": rate,
            "failure_cutoff": summary.failure_cutoff,
            "coverage_failure_fraction": summary.coverage_failure_fraction,
            "band_100_runs": [lo, hi],
        }
    if args.format == "csv":
        flat = {k: v for k, v in body.items() if not isinstance(v, (dict, list))}
        return _rows_csv(list(flat), [[repr(v) if isinstance(v, float) else v for v in flat.values()]])
    return _dumps(body)


def urn_ensemble_rows(n: int, c: float, runs: int, seed: int):
    """Per-run trace rows ``(run, k, u, diagonal)`` with ``diagonal = n - k``."""
    cfg = validation.EnsembleConfig(runs, seed, UrnConfig.from_c(n, c), record=frozenset({"traces", "exhaustions"}))
    summary = validation.run_ensemble(cfg)
    rows = []
    for run, u in enumerate(summary.traces):
        rows.extend((run, k, uk, n - k) for k, uk in enumerate(u))
    return rows, summary


def threshold_curve_rows():
    rows = []
    for i in range(71):
        c = round(0.5 + 0.05 * i, 10)
        rows.append((c, limits.solve_threshold(c).alpha_star))
    return rows


def cmd_figure(args) -> str:
    if args.name == "threshold-curve":
        rows = threshold_curve_rows()
        if args.format == "json":
            return _dumps({"c": [r[0] for r in rows], "alpha_star": [r[1] for r in rows]})
        return _rows_csv(["c", "alpha_star"], [(repr(a), repr(b)) for a, b in rows])
    rows, summary = urn_ensemble_rows(args.n, args.c_value, args.runs, args.seed)
    log.info("failure fraction %.3f over %d runs", summary.failure_fraction, args.runs)
    if args.format == "json":
        return _dumps({"run": [r[0] for r in rows], "k": [r[1] for r in rows], "u": [r[2] for r in rows], "diagonal": [r[3] for r in rows]})
    return _rows_csv(["run", "k", "u", "diagonal"], rows)


COMMANDS = {
    "simulate-graph": cmd_simulate_graph,
    "simulate-urn": cmd_simulate_urn,
    "ensemble": cmd_ensemble,
    "density": cmd_density,
    "threshold": cmd_threshold,
    "exhaustion-law": cmd_exhaustion_law,
    "validate": cmd_validate,
    "figure": cmd_figure,
}


def _write(path, text):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING, format="%(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        _validate(args)
    except UsageError as exc:
        args.parser.print_usage(sys.stderr)
        print(f"{args.parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    try:
        text = COMMANDS[args.subcommand](args)
        if args.out == "-":
            sys.stdout.write(text)
            sys.stdout.flush()
        else:
            _write(args.out, text)
    except BrokenPipeError:
        # reader closed the pipe early; drop the rest silently
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic, nonzero exit
        print(f"{parser.prog} {args.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
