"""Invariant suite behind ``unifcap verify``.

Every check returns a :class:`CheckResult` with a pass flag and a small
machine-readable detail dict. ``quick=True`` shrinks grids and the
numerical sweep; the tolerances it loosens are listed in ``QUICK_FACTORS``.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .analytic import regime_distribution, solve, thresholds
from .channel import CostFunction, make_geometry
from .numerical import BAConfig, ba_solve, discretize, extract_support
from .verification import (
    check_piecewise_linear,
    compare_clusters,
    cost_derivative_check,
    integer_limit_check,
    kkt_report,
    mi_quadrature_oracle,
    perturb_mass,
    sweep_budgets,
)

SWEEP_R = (2.0, 2.4, 3.9, 4.0, 4.4, 6.2)
SWEEP_ALPHA = (0.3, 0.5, 0.7, 1.0)
SWEEP_COUNT = 12

# Stopping rule for the numerical sweep: a duality gap of 1e-5 nats keeps
# the capacity error far inside 5e-3 while fitting the sweep in minutes.
SWEEP_BA = BAConfig(tol=1e-5, max_iter=60_000)
QUICK_BA = BAConfig(gin=501, gout=1001, tol=1e-5, max_iter=20_000)

# tolerance multipliers applied in quick mode
QUICK_FACTORS = {
    "ba_capacity": 4.0,
    "ba_mass": 4.0,
    "quadrature": 100.0,
}


@dataclass
class CheckResult:
    name: str
    passed: bool
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


def _timed(name: str, fn: Callable[[], tuple]) -> CheckResult:
    t0 = time.perf_counter()
    passed, details = fn()
    return CheckResult(name, bool(passed), time.perf_counter() - t0, details)


def sweep_instances(rs=SWEEP_R, alphas=SWEEP_ALPHA, count=SWEEP_COUNT):
    """Yield (geometry, cost, thresholds, cbar) over the acceptance sweep."""
    for r in rs:
        geom = make_geometry(r)
        for alpha in alphas:
            cost = CostFunction.power(alpha)
            th = thresholds(geom, cost)
            for cbar in sweep_budgets(th, count):
                yield geom, cost, th, float(cbar)


def check_integer_capacity():
    errs = {}
    for r in (1, 2, 3, 4, 5):
        geom = make_geometry(r)
        sol = solve(geom, CostFunction.power(0.5), 1.0)
        errs[r] = abs(sol.capacity_nats / math.log(2) - math.log2(geom.n))
    return max(errs.values()) <= 1e-12, {"max_error_bits": max(errs.values())}


def check_noninteger_capacity():
    geom = make_geometry(4.4)
    sol = solve(geom, CostFunction.power(0.5), 1.0)
    want = 0.4 * math.log2(6) + 0.6 * math.log2(5)
    err = abs(sol.capacity_nats / math.log(2) - want)
    return err <= 1e-12, {"error_bits": err}


def check_kkt_sweep(rs=SWEEP_R, alphas=SWEEP_ALPHA, count=SWEEP_COUNT, grid_size=10001):
    worst, failed, total = 0.0, [], 0
    for geom, cost, th, cbar in sweep_instances(rs, alphas, count):
        sol = solve(geom, cost, cbar, th)
        rep = kkt_report(sol.distribution, sol.lambda_star, geom, cost, cbar, grid_size)
        total += 1
        worst = max(worst, rep.eq_residual, rep.ineq_violation)
        if not rep.passed:
            failed.append({"r": geom.r, "alpha": cost.alpha, "cbar": cbar})
    return not failed, {"instances": total, "worst_residual": worst, "failures": failed}


def check_threshold_structure():
    geom = make_geometry(3.9)
    cost = CostFunction.power(0.5)
    th = thresholds(geom, cost)
    theta = th.theta
    ordered = bool(theta.size >= 3 and 0 < theta[2] < theta[1] < theta[0] < th.cbar_star)
    worst_zero, min_other = 0.0, math.inf
    for k, lam in enumerate(th.lambda_at_theta):
        dist, _ = regime_distribution(k, float(lam), geom, cost, check=False)
        full = np.zeros(geom.n_points)
        full[np.asarray(dist.labels) - 1] = dist.masses
        worst_zero = max(worst_zero, abs(full[2 * k + 1]))
        others = np.delete(full, list(range(1, 2 * k + 2, 2)))
        min_other = min(min_other, float(others.min()))
    ok = ordered and worst_zero <= 1e-10 and min_other > 0
    return ok, {"theta": theta.tolist(), "cbar_star": th.cbar_star,
                "max_vanishing_mass": worst_zero, "min_other_mass": min_other}


def ba_instance(chan, cost, sol, config: BAConfig) -> dict:
    """Numerical solve of one instance compared with its analytic solution."""
    res = ba_solve(chan, cost, sol.cbar, config)
    clusters = extract_support(res, chan=chan)
    cmp = compare_clusters(clusters.positions, clusters.masses, sol.distribution,
                           float(chan.inputs[1] - chan.inputs[0]))
    return {
        "r": chan.geometry.r,
        "alpha": cost.alpha,
        "cbar": sol.cbar,
        "regime": sol.regime.label,
        "capacity_error": abs(res.capacity_nats - sol.capacity_nats),
        "mass_error": cmp.max_mass_error,
        "position_error_cells": cmp.max_position_error,
        "iterations": res.iterations,
        "gap": res.gap,
        "converged": res.converged,
    }


def check_ba_agreement(rs=SWEEP_R, alphas=SWEEP_ALPHA, count=SWEEP_COUNT,
                       config: BAConfig = SWEEP_BA, cap_tol=5e-3, mass_tol=1e-3,
                       position_tol=1.0):
    rows, chans = [], {}
    for geom, cost, th, cbar in sweep_instances(rs, alphas, count):
        if geom.r not in chans:
            chans[geom.r] = discretize(geom, config.gin, config.gout)
        rows.append(ba_instance(chans[geom.r], cost, solve(geom, cost, cbar, th), config))
    bad_cap = [r for r in rows if r["capacity_error"] > cap_tol]
    bad_mass = [r for r in rows if r["mass_error"] > mass_tol]
    bad_pos = [r for r in rows if r["position_error_cells"] > position_tol]
    details = {
        "instances": len(rows),
        "max_capacity_error": max(r["capacity_error"] for r in rows),
        "max_mass_error": max(r["mass_error"] for r in rows),
        "max_position_error_cells": max(r["position_error_cells"] for r in rows),
        "capacity_failures": len(bad_cap),
        "mass_failures": len(bad_mass),
        "position_failures": len(bad_pos),
        "failing": [r for r in rows if r in bad_cap or r in bad_mass or r in bad_pos][:50],
    }
    return not (bad_cap or bad_mass or bad_pos), details


def check_case_iii_support(config: BAConfig = BAConfig()):
    geom = make_geometry(2.4)
    chan = discretize(geom, config.gin, config.gout)
    convex = extract_support(ba_solve(chan, CostFunction.power(2.0), 0.35, config), chan=chan)
    concave = extract_support(ba_solve(chan, CostFunction.power(0.5), 0.35, config), chan=chan)
    ok = convex.largest_gap <= 3 and concave.discrete
    return ok, {"convex_largest_gap": convex.largest_gap, "concave_clusters": concave.count,
                "concave_cluster_mass": concave.total_mass, "limit": 2 * geom.n}


def linearity_cases():
    """The three solutions whose i(x) segments are checked."""
    g24, g4, g62 = make_geometry(2.4), make_geometry(4.0), make_geometry(6.2)
    c07, c05 = CostFunction.power(0.7), CostFunction.power(0.5)
    th62 = thresholds(g62, c05)
    band3 = 0.5 * (th62.theta[2] + th62.theta[3])
    case_i = solve(g24, c05, 1.0)
    case_iia = solve(g4, c07, 0.5 * thresholds(g4, c07).cbar_star)
    case_iib = solve(g62, c05, float(band3), th62)
    return {"I r=2.4": case_i, "IIa r=4": case_iia, "IIb(3) r=6.2": case_iib}


def check_linearity():
    details, ok = {}, True
    for name, sol in linearity_cases().items():
        rep = check_piecewise_linear(sol.distribution, sol.geometry)
        details[name] = {"second_difference": rep.max_second_difference(),
                         "slope_deviation": rep.max_slope_deviation()}
        ok = ok and rep.passed(1e-8)
    return ok, details


def check_derivative_identity():
    geom, cost = make_geometry(4), CostFunction.power(0.7)
    res = {lam: cost_derivative_check(lam, geom, cost) for lam in (0.1, 1.0, 5.0)}
    return max(res.values()) <= 1e-6, {"residuals": {str(k): v for k, v in res.items()}}


def check_integer_limit():
    dev = integer_limit_check(4, 1e-6)
    return dev <= 1e-4, {"deviation": dev}


def check_capacity_quadrature(fine_grid=10**6, tol=1e-6):
    geom, cost = make_geometry(4.4), CostFunction.power(0.7)
    th = thresholds(geom, cost)
    budgets = th.cbar_star * np.array([0.2, 0.5, 0.8])
    errs = []
    for cbar in budgets:
        sol = solve(geom, cost, float(cbar), th)
        errs.append(abs(sol.capacity_nats - mi_quadrature_oracle(sol.distribution, geom, fine_grid)))
    return max(errs) <= tol, {"errors": errs}


def check_negative_controls():
    """Every single-mass perturbation of certified solutions must fail KKT."""
    missed, total = [], 0
    for sol in linearity_cases().values():
        base = kkt_report(sol.distribution, sol.lambda_star, sol.geometry, sol.cost, sol.cbar)
        if not base.passed:
            missed.append({"regime": sol.regime.label, "reason": "baseline failed"})
            continue
        for j in range(len(sol.distribution)):
            total += 1
            bad = perturb_mass(sol.distribution, j, 1e-3)
            rep = kkt_report(bad, sol.lambda_star, sol.geometry, sol.cost, sol.cbar)
            if rep.passed:
                missed.append({"regime": sol.regime.label, "index": j})
    return not missed, {"perturbations": total, "undetected": missed}


def run_suite(quick: bool = False, negative_controls: bool = False,
              numeric: bool = True) -> list:
    """Run every check; ``numeric=False`` skips the numerical solver."""
    checks = [
        ("integer_capacity", check_integer_capacity),
        ("noninteger_capacity", check_noninteger_capacity),
        ("kkt_sweep", check_kkt_sweep),
        ("threshold_structure", check_threshold_structure),
        ("linearity", check_linearity),
        ("derivative_identity", check_derivative_identity),
        ("integer_limit", check_integer_limit),
    ]
    if quick:
        checks.append(("capacity_quadrature",
                       lambda: check_capacity_quadrature(10**5, 1e-6 * QUICK_FACTORS["quadrature"])))
    else:
        checks.append(("capacity_quadrature", check_capacity_quadrature))
    if numeric:
        if quick:
            checks.append(("ba_agreement", lambda: check_ba_agreement(
                rs=(2.4, 4.0), alphas=(0.5, 1.0), count=SWEEP_COUNT, config=QUICK_BA,
                cap_tol=5e-3 * QUICK_FACTORS["ba_capacity"],
                mass_tol=1e-3 * QUICK_FACTORS["ba_mass"])))
            checks.append(("case_iii_support", lambda: check_case_iii_support(
                BAConfig(gin=501, gout=1001, tol=1e-8, max_iter=50_000))))
        else:
            checks.append(("ba_agreement", check_ba_agreement))
            checks.append(("case_iii_support", check_case_iii_support))
    if negative_controls:
        checks.append(("negative_controls", check_negative_controls))
    return [_timed(name, fn) for name, fn in checks]
