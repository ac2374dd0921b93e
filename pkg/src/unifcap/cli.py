"""Command-line front end (``unifcap``).

Exit codes: 0 success, 1 usage or input error, 2 verification failure,
3 numerical failure. Data files carry no timestamps; the only run metadata
is the '#' provenance line, which ``--no-header`` suppresses.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .analytic import RegimeKind, classify, solve, thresholds
from .channel import CostFunction, load_cost_table, make_geometry
from .errors import NumericalFailure, UnifcapError
from .numerical import BAConfig, ba_solve, discretize, extract_support
from .suite import run_suite
from .verification import kkt_report

log = logging.getLogger("unifcap")

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------


@dataclass
class SolutionRecord:
    """Flat, JSON-serializable view of one solve."""

    solver: str  # "analytic" or "ba"
    version: str
    config: dict
    r: float
    b: float
    n: int
    rho: float
    cost: str
    cbar: float
    regime: str
    lam: float
    capacity_nats: float
    capacity: float
    units: str
    expected_cost: float
    positions: list
    masses: list
    labels: Optional[list] = None
    kkt: Optional[dict] = None
    ba: Optional[dict] = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SolutionRecord":
        return cls(**json.loads(text))


def _in_units(nats: float, units: str) -> float:
    return nats / math.log(2.0) if units == "bits" else nats


def analytic_record(sol, units: str, config: dict) -> SolutionRecord:
    geom, dist = sol.geometry, sol.distribution
    rep = kkt_report(dist, sol.lambda_star, geom, sol.cost, sol.cbar)
    return SolutionRecord(
        "analytic", __version__, config, geom.r, geom.b, geom.n, geom.rho, sol.cost.describe(),
        sol.cbar, sol.regime.label, sol.lambda_star, sol.capacity_nats,
        _in_units(sol.capacity_nats, units), units, sol.expected_cost,
        dist.positions.tolist(), dist.masses.tolist(),
        None if dist.labels is None else list(dist.labels), rep.as_dict(), None,
    )


def ba_record(res, chan, cost, regime: str, units: str, config: dict) -> SolutionRecord:
    geom = chan.geometry
    clusters = extract_support(res, chan=chan)
    info = {
        "iterations": res.iterations,
        "converged": res.converged,
        "gap": res.gap,
        "gin": chan.gin,
        "gout": chan.gout,
        "clusters": clusters.count,
        "largest_gap_cells": clusters.largest_gap,
        "cluster_mass": clusters.total_mass,
        "full_support": clusters.full_support,
        "discrete": clusters.discrete,
    }
    return SolutionRecord(
        "ba", __version__, config, geom.r, geom.b, geom.n, geom.rho, cost.describe(),
        float(res.cbar) if res.cbar is not None else math.nan, regime, res.lam,
        res.capacity_nats, _in_units(res.capacity_nats, units), units, res.expected_cost,
        clusters.positions.tolist(), clusters.masses.tolist(), None, None, info,
    )


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def parse_range(text: str) -> np.ndarray:
    """LO:HI:STEP, inclusive of HI up to half a step."""
    try:
        lo, hi, step = (float(v) for v in text.split(":"))
    except ValueError:
        raise UsageError(f"range must be LO:HI:STEP, got {text!r}") from None
    if step <= 0 or hi < lo:
        raise UsageError(f"range needs STEP > 0 and HI >= LO, got {text!r}")
    count = int(math.floor((hi - lo) / step + 0.5)) + 1
    return lo + step * np.arange(count)


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def write_csv(columns: list, rows: list, args, meta: str) -> str:
    buf = io.StringIO()
    if not args.no_header:
        buf.write(f"# unifcap {__version__} {meta}\n")
    buf.write("# " + ",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def emit(text: str, args) -> None:
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cost(args) -> CostFunction:
    if args.cost_table:
        return load_cost_table(args.cost_table)
    if args.alpha is None:
        raise UsageError("give --alpha or --cost-table")
    return CostFunction.power(args.alpha)


def _ba_config(args, **overrides) -> BAConfig:
    gin, gout = args.gin, args.gout
    if args.quick:
        gin, gout = min(gin, 501), min(gout, 1001)
    opts = dict(gin=gin, gout=gout, tol=args.tol, max_iter=args.max_iter)
    opts.update(overrides)
    return BAConfig(**opts)


def _config_echo(args) -> dict:
    skip = {"func"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _need_r(args) -> None:
    if args.r is None:
        raise UsageError(f"{args.command} needs --r")


def cmd_solve(args) -> int:
    _need_r(args)
    if args.cbar is None:
        raise UsageError("solve needs --cbar")
    geom, cost = make_geometry(args.r), _cost(args)
    regime = classify(geom, cost, args.cbar)
    units = args.units
    if regime.kind is RegimeKind.CASE_III:
        log.info("regime III has no closed form; running the numerical solver")
        chan = discretize(geom, *_grids(args))
        res = ba_solve(chan, cost, args.cbar, _ba_config(args))
        record = ba_record(res, chan, cost, regime.label, units, _config_echo(args))
        _emit_record(record, args)
        return EXIT_OK if res.converged else _not_converged(res)
    sol = solve(geom, cost, args.cbar)
    record = analytic_record(sol, units, _config_echo(args))
    _emit_record(record, args)
    return EXIT_OK if record.kkt["passed"] else EXIT_VERIFY


def _grids(args):
    cfg = _ba_config(args)
    return cfg.gin, cfg.gout


def _not_converged(res) -> int:
    log.warning("numerical solver stopped at gap %.3e after %d iterations", res.gap, res.iterations)
    return EXIT_NUMERIC


def _emit_record(record: SolutionRecord, args) -> None:
    if args.format == "json":
        emit(record.to_json() + "\n", args)
        return
    cols = ["position", "mass"]
    rows = list(zip(record.positions, record.masses))
    meta = (f"solve solver={record.solver} regime={record.regime} r={record.r!r} "
            f"cost={record.cost} cbar={record.cbar!r} lambda={record.lam!r} "
            f"capacity_{record.units}={record.capacity!r}")
    emit(write_csv(cols, rows, args, meta), args)


def cmd_ba(args) -> int:
    _need_r(args)
    if args.cbar is None:
        raise UsageError("ba needs --cbar")
    geom, cost = make_geometry(args.r), _cost(args)
    chan = discretize(geom, *_grids(args))
    res = ba_solve(chan, cost, args.cbar, _ba_config(args))
    regime = classify(geom, cost, args.cbar)
    _emit_record(ba_record(res, chan, cost, regime.label, args.units, _config_echo(args)), args)
    return EXIT_OK if res.converged else _not_converged(res)


def cmd_capacity(args) -> int:
    cost = _cost(args)
    if args.r_range and args.cbar_range:
        raise UsageError("sweep either --r-range or --cbar-range, not both")
    if args.r_range:
        if args.cbar is None:
            raise UsageError("an r sweep needs a fixed --cbar")
        points = [(float(r), args.cbar) for r in parse_range(args.r_range)]
        var = "r"
    else:
        if args.r is None:
            raise UsageError("give --r or --r-range")
        budgets = parse_range(args.cbar_range) if args.cbar_range else [args.cbar]
        if budgets[0] is None:
            raise UsageError("give --cbar or --cbar-range")
        points = [(args.r, float(c)) for c in budgets]
        var = "cbar"
    units, rows, chans, failed = args.units, [], {}, False
    cfg = _ba_config(args)
    for r, cbar in points:
        geom = make_geometry(r)
        regime = classify(geom, cost, cbar)
        exact = math.nan
        if regime.kind is not RegimeKind.CASE_III:
            exact = solve(geom, cost, cbar).capacity_nats
        numeric = math.nan
        if not args.analytic_only:
            if geom.r not in chans:
                chans[geom.r] = discretize(geom, cfg.gin, cfg.gout)
            res = ba_solve(chans[geom.r], cost, cbar, cfg)
            failed = failed or not res.converged
            numeric = res.capacity_nats
        a, n = _in_units(exact, units), _in_units(numeric, units)
        rows.append((r if var == "r" else cbar, a, n, abs(a - n), regime.label))
    cols = [var, f"capacity_analytic_{units}", f"capacity_ba_{units}", f"abs_gap_{units}", "regime"]
    meta = f"capacity cost={cost.describe()} " + (f"cbar={args.cbar!r}" if var == "r" else f"r={args.r!r}")
    emit(write_csv(cols, rows, args, meta), args)
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_phase_diagram(args) -> int:
    if args.r is None or not args.alpha_range or not args.cbar_range:
        raise UsageError("phase-diagram needs --r, --alpha-range and --cbar-range")
    geom = make_geometry(args.r)
    alphas, budgets = parse_range(args.alpha_range), parse_range(args.cbar_range)
    cfg = _ba_config(args)
    chan = discretize(geom, cfg.gin, cfg.gout) if args.confirm_numeric else None
    rows, mismatch = [], False
    for alpha in alphas:
        cost = CostFunction.power(float(alpha))
        th = thresholds(geom, cost) if cost.curvature.is_concave_or_linear else None
        for cbar in budgets:
            regime = classify(geom, cost, float(cbar), th)
            confirmed = ""
            if chan is not None and regime.kind is RegimeKind.CASE_III:
                res = ba_solve(chan, cost, float(cbar), cfg)
                full = extract_support(res, chan=chan).full_support
                confirmed = int(full)
                mismatch = mismatch or not full
            rows.append((float(alpha), float(cbar), regime.label, confirmed))
    cols = ["alpha", "cbar", "regime", "full_support_confirmed"]
    emit(write_csv(cols, rows, args, f"phase-diagram r={args.r!r}"), args)
    return EXIT_VERIFY if mismatch else EXIT_OK


def cmd_masses_vs_budget(args) -> int:
    if args.r is None or not args.cbar_range:
        raise UsageError("masses-vs-budget needs --r and --cbar-range")
    geom, cost = make_geometry(args.r), _cost(args)
    if not cost.curvature.is_concave_or_linear:
        raise UsageError("masses-vs-budget needs a concave or linear cost")
    th = thresholds(geom, cost)
    entries = [("grid", float(c)) for c in parse_range(args.cbar_range)]
    entries += [(f"theta_{k}", float(t)) for k, t in enumerate(th.theta)]
    entries.append(("cbar_star", th.cbar_star))
    entries.sort(key=lambda e: (e[1], e[0]))
    rows = []
    for kind, cbar in entries:
        if not 0.0 < cbar <= 1.0:
            continue
        sol = solve(geom, cost, cbar, th)
        rows.append((kind, cbar, sol.regime.label, sol.lambda_star, *sol.grid_masses()))
    cols = ["row", "cbar", "regime", "lambda"] + [f"m_{j}" for j in range(1, geom.n_points + 1)]
    meta = f"masses-vs-budget r={geom.r!r} cost={cost.describe()}"
    emit(write_csv(cols, rows, args, meta), args)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(quick=args.quick, negative_controls=args.negative_controls)
    summary = {
        "version": __version__,
        "quick": args.quick,
        "passed": all(r.passed for r in results),
        "checks": [r.as_dict() for r in results],
    }
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} ({r.seconds:.1f} s)", file=sys.stderr)
    emit(json.dumps(summary, indent=2, sort_keys=True, default=float) + "\n", args)
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--r", type=float, help="inverse noise width 1/(2b)")
    common.add_argument("--alpha", type=float, help="power-cost exponent, c(x) = x**alpha")
    common.add_argument("--cost-table", metavar="PATH", help="two-column CSV of x, c(x)")
    common.add_argument("--cbar", type=float, help="cost budget in (0, 1]")
    common.add_argument("--cbar-range", metavar="LO:HI:STEP")
    common.add_argument("--r-range", metavar="LO:HI:STEP")
    common.add_argument("--alpha-range", metavar="LO:HI:STEP")
    common.add_argument("--gin", type=int, default=2001, help="input grid points")
    common.add_argument("--gout", type=int, default=4001, help="output grid cells")
    common.add_argument("--tol", type=float, default=BAConfig.tol, help="numerical gap tolerance")
    common.add_argument("--max-iter", type=int, default=BAConfig.max_iter)
    common.add_argument("--units", choices=("bits", "nats"), default="bits")
    common.add_argument("--format", choices=("json", "csv"),
                        help="json for solve/ba/verify, csv for sweeps by default")
    common.add_argument("--out", metavar="PATH")
    common.add_argument("--confirm-numeric", action="store_true")
    common.add_argument("--analytic-only", action="store_true",
                        help="skip the numerical column of capacity sweeps")
    common.add_argument("--quick", action="store_true", help="reduced grids")
    common.add_argument("--negative-controls", action="store_true")
    common.add_argument("--no-header", action="store_true", help="omit the provenance line")
    common.add_argument("--seed", type=int, help="reserved; every algorithm is deterministic")

    parser = _Parser(prog="unifcap", description="Capacity of the uniform-noise channel "
                     "under peak-amplitude and average-cost constraints.")
    parser.add_argument("--version", action="version", version=f"unifcap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in (
        ("solve", cmd_solve, "capacity-achieving input for one instance"),
        ("capacity", cmd_capacity, "capacity over a budget or r sweep"),
        ("phase-diagram", cmd_phase_diagram, "regime labels over an (alpha, cbar) grid"),
        ("verify", cmd_verify, "run the invariant suite"),
        ("masses-vs-budget", cmd_masses_vs_budget, "masses and multiplier along a budget sweep"),
        ("ba", cmd_ba, "numerical solve only"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=fn)
    return parser


def _setup_logging() -> None:
    level = os.environ.get("UNIFCAP_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.format is None:
        args.format = "json" if args.command in ("solve", "ba", "verify") else "csv"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"unifcap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"unifcap: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UnifcapError, ValueError, OSError) as exc:
        print(f"unifcap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
