"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is repeated in the
terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from unifcap.analytic import regime_distribution, solve, thresholds, unconstrained_solution
from unifcap.channel import CostFunction, make_geometry
from unifcap.numerical import BAConfig, ba_solve, discretize, extract_support
from unifcap.suite import SWEEP_BA, linearity_cases, sweep_instances
from unifcap.verification import (
    check_piecewise_linear,
    compare_clusters,
    cost_derivative_check,
    integer_limit_check,
    kkt_report,
    mi_quadrature_oracle,
    perturb_mass,
)

LOG2 = math.log(2.0)


def test_criterion_01_integer_capacity(criterion):
    errs = []
    for r in (1, 2, 3, 4, 5):
        g = make_geometry(r)
        sol = solve(g, CostFunction.power(0.5), 1.0)
        errs.append(abs(sol.capacity_nats / LOG2 - math.log2(g.n)))
    worst = max(errs)
    assert criterion(1, "Case I integer capacity = log2(n) bits", worst <= 1e-12,
                     f"max error {worst:.2e} bits")


def test_criterion_02_noninteger_capacity(criterion):
    g = make_geometry(4.4)
    sol = solve(g, CostFunction.power(0.5), 1.0)
    err = abs(sol.capacity_nats / LOG2 - (0.4 * math.log2(6) + 0.6 * math.log2(5)))
    n, r = 5, 4.4
    j = np.arange(1, 2 * n + 1)
    x = np.where(j % 2 == 1, (j - 1) / (2 * r), 1 - (2 * n - j) / (2 * r))
    m = np.where(j % 2 == 1, (2 * n - j + 1) / (2 * n * (n + 1)), j / (2 * n * (n + 1)))
    d = unconstrained_solution(g)
    dev = max(np.max(np.abs(d.positions - x)), np.max(np.abs(d.masses - m)))
    ok = err <= 1e-12 and dev <= 1e-15
    assert criterion(2, "Case I r=4.4 capacity and grid", ok,
                     f"capacity error {err:.2e} bits, grid deviation {dev:.1e}")


def test_criterion_03_kkt_sweep(criterion):
    t0 = time.perf_counter()
    worst_eq = worst_ineq = 0.0
    failures, total = [], 0
    for g, cost, th, cbar in sweep_instances():
        sol = solve(g, cost, cbar, th)
        rep = kkt_report(sol.distribution, sol.lambda_star, g, cost, cbar, grid_size=10001,
                         tol_eq=1e-8, tol_ineq=1e-8)
        total += 1
        worst_eq = max(worst_eq, rep.eq_residual)
        worst_ineq = max(worst_ineq, rep.ineq_violation)
        if not rep.passed:
            failures.append((g.r, cost.alpha, cbar))
    secs = time.perf_counter() - t0
    ok = total == 288 and not failures and secs < 60
    assert criterion(3, "KKT certification sweep", ok,
                     f"{total} instances, {len(failures)} failures, eq {worst_eq:.1e}, "
                     f"ineq {worst_ineq:.1e}, {secs:.1f} s"), failures


def test_criterion_04_threshold_structure(criterion):
    g, cost = make_geometry(3.9), CostFunction.power(0.5)
    th = thresholds(g, cost)
    t = th.theta
    ordered = t.size == 3 and 0 < t[2] < t[1] < t[0] < th.cbar_star
    worst_zero, min_other = 0.0, math.inf
    for k, lam in enumerate(th.lambda_at_theta):
        dist, _ = regime_distribution(k, float(lam), g, cost, check=False)
        full = np.zeros(g.n_points)
        full[np.asarray(dist.labels) - 1] = dist.masses
        worst_zero = max(worst_zero, abs(full[2 * k + 1]))
        # every other point of the support S_k
        support = np.asarray(dist.labels) - 1
        others = full[support[support != 2 * k + 1]]
        min_other = min(min_other, float(others.min()))
    ok = ordered and worst_zero <= 1e-10 and min_other > 0
    assert criterion(4, "threshold structure r=3.9 alpha=0.5", ok,
                     f"theta={np.round(t, 6).tolist()}, cbar*={th.cbar_star:.6f}, "
                     f"vanishing mass {worst_zero:.1e}, min other {min_other:.2e}")


@pytest.mark.slow
def test_criterion_05_ba_agreement(criterion):
    t0 = time.perf_counter()
    chans, rows = {}, []
    for g, cost, th, cbar in sweep_instances():
        if g.r not in chans:
            chans[g.r] = discretize(g, 2001, 4001)
        chan = chans[g.r]
        sol = solve(g, cost, cbar, th)
        res = ba_solve(chan, cost, cbar, SWEEP_BA)
        cl = extract_support(res, chan=chan)
        cmp = compare_clusters(cl.positions, cl.masses, sol.distribution,
                               float(chan.inputs[1] - chan.inputs[0]),
                               mass_tol=1e-3, position_tol=1.0)
        rows.append((g.r, cost.alpha, cbar, abs(res.capacity_nats - sol.capacity_nats),
                     cmp.max_mass_error, cmp.max_position_error))
    secs = time.perf_counter() - t0
    a = np.array(rows)
    cap_fail = int(np.sum(a[:, 3] > 5e-3))
    mass_fail = int(np.sum(a[:, 4] > 1e-3))
    pos_fail = int(np.sum(a[:, 5] > 1.0))
    ok = cap_fail == mass_fail == pos_fail == 0 and secs <= 600
    worst = [tuple(np.round(r, 4)) for r in a[a[:, 5] > 1.0][:5]]
    assert criterion(5, "BA agreement over the sweep", ok,
                     f"{len(rows)} instances in {secs:.0f} s; failures capacity {cap_fail}, "
                     f"mass {mass_fail}, position {pos_fail}; max |dC| {a[:, 3].max():.1e} nats, "
                     f"max dm {a[:, 4].max():.1e}, max dx {a[:, 5].max():.2f} cells"), worst


@pytest.mark.slow
def test_criterion_06_case_iii_full_support(criterion):
    t0 = time.perf_counter()
    g = make_geometry(2.4)
    cfg = BAConfig()
    chan = discretize(g, cfg.gin, cfg.gout)
    convex = extract_support(ba_solve(chan, CostFunction.power(2.0), 0.35, cfg), chan=chan)
    concave = extract_support(ba_solve(chan, CostFunction.power(0.5), 0.35, cfg), chan=chan)
    secs = time.perf_counter() - t0
    ok = convex.largest_gap <= 3 and concave.discrete and concave.count <= 2 * g.n and secs < 60
    assert criterion(6, "Case III full support vs concave discreteness", ok,
                     f"convex largest gap {convex.largest_gap} cells; concave "
                     f"{concave.count} clusters (limit {2 * g.n}); {secs:.0f} s")


def test_criterion_07_piecewise_linearity(criterion):
    worst_second = worst_slope = 0.0
    labels = []
    for name, sol in linearity_cases().items():
        rep = check_piecewise_linear(sol.distribution, sol.geometry)
        worst_second = max(worst_second, rep.max_second_difference())
        worst_slope = max(worst_slope, rep.max_slope_deviation())
        labels.append(sol.regime.label)
    ok = labels == ["I", "IIa", "IIb(3)"] and worst_second <= 1e-8 and worst_slope <= 1e-8
    assert criterion(7, "piecewise linearity and slopes", ok,
                     f"regimes {labels}, second difference {worst_second:.1e}, "
                     f"slope deviation {worst_slope:.1e}")


def test_criterion_08_derivative_identity(criterion):
    g, cost = make_geometry(4), CostFunction.power(0.7)
    res = [cost_derivative_check(lam, g, cost, step=1e-5) for lam in (0.1, 1.0, 5.0)]
    assert criterion(8, "d<c>/dlambda = -Var(c)", max(res) <= 1e-6,
                     f"residuals {', '.join(f'{v:.1e}' for v in res)}")


def test_criterion_09_integer_limit(criterion):
    dev = integer_limit_check(4, 1e-6)
    assert criterion(9, "integer-limit continuity r=4+1e-6", dev <= 1e-4, f"deviation {dev:.1e}")


def test_criterion_10_capacity_convex_combination(criterion):
    g, cost = make_geometry(4.4), CostFunction.power(0.7)
    th = thresholds(g, cost)
    errs = []
    for frac in (0.2, 0.5, 0.8):
        sol = solve(g, cost, frac * th.cbar_star, th)
        assert sol.regime.kind.value == "IIb"
        errs.append(abs(sol.capacity_nats - mi_quadrature_oracle(sol.distribution, g, 10**6)))
    assert criterion(10, "rho H(mhat) + (1-rho) H(mbar) vs quadrature", max(errs) <= 1e-6,
                     f"max error {max(errs):.1e} nats")


def test_criterion_11_negative_controls(criterion):
    total, missed = 0, []
    for g, cost, th, cbar in sweep_instances():
        sol = solve(g, cost, cbar, th)
        for j in range(len(sol.distribution)):
            for delta in (1e-3, -1e-3):
                total += 1
                bad = perturb_mass(sol.distribution, j, delta)
                if kkt_report(bad, sol.lambda_star, g, cost, cbar).passed:
                    missed.append((g.r, cost.alpha, cbar, j, delta))
    assert criterion(11, "negative controls flip KKT", not missed,
                     f"{total} perturbations, {len(missed)} undetected"), missed[:5]
