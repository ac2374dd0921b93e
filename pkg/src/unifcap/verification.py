"""Optimality certificates and independent cross-checks.

A candidate p_X with multiplier lam is optimal iff

    i(x) <= I + lam (c(x) - cbar)   for all x in [0, 1],
    i(x)  = I + lam (c(x) - cbar)   on the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import entr

from .analytic import (
    Thresholds,
    integer_masses,
    unconstrained_solution,
)
from .channel import (
    ChannelGeometry,
    CostFunction,
    DiscreteInputDistribution,
    make_geometry,
    marginal_information_density,
    mutual_information,
    output_density,
)

KKT_TOL = 1e-8


@dataclass(frozen=True)
class KKTReport:
    mutual_information: float
    lam: float
    eq_residual: float
    ineq_violation: float
    worst_x: float
    tol_eq: float = KKT_TOL
    tol_ineq: float = KKT_TOL

    @property
    def passed(self) -> bool:
        return self.eq_residual <= self.tol_eq and self.ineq_violation <= self.tol_ineq

    def as_dict(self) -> dict:
        return {
            "mutual_information": self.mutual_information,
            "lambda": self.lam,
            "eq_residual": self.eq_residual,
            "ineq_violation": self.ineq_violation,
            "worst_x": self.worst_x,
            "tol_eq": self.tol_eq,
            "tol_ineq": self.tol_ineq,
            "passed": self.passed,
        }


def kkt_report(dist: DiscreteInputDistribution, lam: float, geom: ChannelGeometry,
               cost: CostFunction, cbar: float, grid_size: int = 10001,
               tol_eq: float = KKT_TOL, tol_ineq: float = KKT_TOL,
               relative: bool = False) -> KKTReport:
    """Check both optimality conditions for ``dist`` at multiplier ``lam``.

    The inequality is probed on a uniform grid of ``grid_size`` points plus
    every kink of i(x) and every support point. With ``relative=True`` the
    tolerances are multiplied by max(1, I, lam).
    """
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    pY = output_density(dist, geom)
    dens_support = np.atleast_1d(
        marginal_information_density(dist.positions, dist, geom, pY)
    )
    support = dist.masses > 0
    if np.any(~np.isfinite(dens_support[support])):
        info = math.inf
    else:
        info = float(np.dot(dist.masses[support], dens_support[support]))

    c_supp = cost(dist.positions[support])
    eq = np.abs(dens_support[support] - info - lam * (c_supp - cbar))
    eq_residual = float(np.max(eq)) if eq.size else 0.0

    kinks = np.concatenate((pY.breakpoints - geom.b, pY.breakpoints + geom.b))
    kinks = kinks[(kinks >= 0.0) & (kinks <= 1.0)]
    xs = np.unique(np.concatenate((np.linspace(0.0, 1.0, grid_size), kinks, dist.positions)))
    dens = marginal_information_density(xs, dist, geom, pY)
    with np.errstate(invalid="ignore"):
        slack = info + lam * (cost(xs) - cbar) - dens
    slack = np.where(np.isnan(slack), -np.inf, slack)
    worst = int(np.argmin(slack))
    violation = max(0.0, -float(slack[worst]))

    if relative:
        scale = max(1.0, abs(info) if math.isfinite(info) else 1.0, abs(lam))
        tol_eq, tol_ineq = tol_eq * scale, tol_ineq * scale
    return KKTReport(info, float(lam), eq_residual, violation, float(xs[worst]), tol_eq, tol_ineq)


def perturb_mass(dist: DiscreteInputDistribution, index: int, delta: float = 1e-3) -> DiscreteInputDistribution:
    """Add ``delta`` to one mass and renormalize (a negative control)."""
    m = dist.masses.copy()
    m[index] = max(m[index] + delta, 0.0)
    return DiscreteInputDistribution(dist.positions, m / m.sum(), dist.labels)


def shift_position(dist: DiscreteInputDistribution, index: int, delta: float) -> DiscreteInputDistribution:
    """Move one point by ``delta`` (clipped to its neighbours and to [0, 1])."""
    x = dist.positions.copy()
    lo = x[index - 1] if index > 0 else 0.0
    hi = x[index + 1] if index + 1 < x.size else 1.0
    x[index] = float(np.clip(x[index] + delta, lo, hi))
    if (index > 0 and x[index] <= lo) or (index + 1 < x.size and x[index] >= hi):
        raise ValueError("shift collides with a neighbouring point")
    return DiscreteInputDistribution(x, dist.masses, dist.labels)


# ---------------------------------------------------------------------------
# Piecewise linearity of i(x)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearityReport:
    left: np.ndarray
    right: np.ndarray
    second_difference: np.ndarray
    measured_slope: np.ndarray
    formula_slope: np.ndarray
    undefined: tuple = field(default=())

    @property
    def slope_deviation(self) -> np.ndarray:
        dev = np.abs(self.measured_slope - self.formula_slope)
        return np.where(np.isfinite(self.formula_slope), dev, np.nan)

    def max_second_difference(self) -> float:
        return float(np.max(self.second_difference))

    def max_slope_deviation(self) -> float:
        dev = self.slope_deviation
        dev = dev[np.isfinite(dev)]
        return float(np.max(dev)) if dev.size else 0.0

    def passed(self, tol: float = 1e-8) -> bool:
        return self.max_second_difference() <= tol and self.max_slope_deviation() <= tol


def grid_masses(dist: DiscreteInputDistribution, geom: ChannelGeometry, atol: float = 1e-12) -> np.ndarray:
    """Masses of ``dist`` placed on the unconstrained grid of ``geom``."""
    grid = geom.grid_positions()
    full = np.zeros(grid.size)
    if dist.labels is not None:
        full[np.asarray(dist.labels) - 1] = dist.masses
        return full
    idx = np.clip(np.searchsorted(grid, dist.positions), 0, grid.size - 1)
    near = np.where(
        (idx > 0) & (np.abs(grid[idx - 1] - dist.positions) < np.abs(grid[idx] - dist.positions)),
        idx - 1, idx,
    )
    if np.any(np.abs(grid[near] - dist.positions) > atol):
        raise ValueError("distribution is not supported on the unconstrained grid")
    full[near] = dist.masses
    return full


def slope_formula(masses: np.ndarray, geom: ChannelGeometry) -> np.ndarray:
    """Closed-form slope of i(x) on each grid segment; NaN where undefined."""
    m = np.asarray(masses, dtype=np.float64)
    r = geom.r
    with np.errstate(divide="ignore", invalid="ignore"):
        if geom.is_integer:
            num, den = m[:-1], m[1:]
        else:
            p = np.concatenate(([0.0], m, [0.0]))
            # segment j: (m_{j-1} + m_j) / (m_{j+1} + m_{j+2})
            num = p[:-3] + p[1:-2]
            den = p[2:-1] + p[3:]
        out = r * np.log(num / den)
    return np.where((num > 0) & (den > 0), out, np.nan)


def check_piecewise_linear(dist: DiscreteInputDistribution, geom: ChannelGeometry,
                           refinement: int = 1000) -> LinearityReport:
    """Second differences and slopes of i(x) on every unconstrained-grid segment."""
    grid = geom.grid_positions()
    masses = grid_masses(dist, geom)
    pY = output_density(dist, geom)
    nseg = grid.size - 1
    second = np.empty(nseg)
    measured = np.empty(nseg)
    for s in range(nseg):
        t = np.linspace(grid[s], grid[s + 1], refinement + 1)
        vals = marginal_information_density(t, dist, geom, pY)
        if np.all(np.isfinite(vals)):
            second[s] = np.max(np.abs(np.diff(vals, 2))) if t.size > 2 else 0.0
        else:
            second[s] = np.inf
        measured[s] = (vals[-1] - vals[0]) / (t[-1] - t[0])
    formula = slope_formula(masses, geom)
    undefined = tuple(int(s) for s in np.flatnonzero(~np.isfinite(formula)))
    return LinearityReport(grid[:-1].copy(), grid[1:].copy(), second, measured, formula, undefined)


# ---------------------------------------------------------------------------
# Independent checks
# ---------------------------------------------------------------------------


def mi_quadrature_oracle(dist: DiscreteInputDistribution, geom: ChannelGeometry,
                         fine_grid: int = 10**6) -> float:
    """Mutual information by a midpoint Riemann sum of h(Y) on a fine grid.

    The uniform grid is refined with every kernel edge x_j -+ b, so no cell
    straddles a jump of p_Y. The density at each cell midpoint is counted
    straight from the kernel windows, independently of the exact segment
    construction.
    """
    if fine_grid < 10**5:
        raise ValueError("fine_grid must be at least 1e5")
    b, r = geom.b, geom.r
    kernel_edges = np.concatenate((dist.positions - b, dist.positions + b))
    edges = np.union1d(np.linspace(-b, 1.0 + b, fine_grid + 1), kernel_edges)
    width = np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    # cells whose midpoints satisfy x_j - b < y < x_j + b
    first = np.searchsorted(mid, dist.positions - b, side="right")
    last = np.searchsorted(mid, dist.positions + b, side="left")
    diff = np.zeros(mid.size + 1)
    np.add.at(diff, first, dist.masses)
    np.add.at(diff, last, -dist.masses)
    p = r * np.clip(np.cumsum(diff[:-1]), 0.0, None)
    h = float(np.dot(entr(p), width))
    return h - math.log(2.0 * b)


def mean_and_variance(lam: float, geom: ChannelGeometry, cost: CostFunction):
    dist = integer_masses(lam, geom, cost)
    c = cost(dist.positions)
    mean = float(np.dot(dist.masses, c))
    return mean, float(np.dot(dist.masses, (c - mean) ** 2))


def cost_derivative_check(lam: float, geom: ChannelGeometry, cost: CostFunction,
                          step: float = 1e-5) -> float:
    """|d<c>/d lam + Var(c)| with a central difference on the integer grid."""
    up, _ = mean_and_variance(lam + step, geom, cost)
    down, _ = mean_and_variance(lam - step, geom, cost)
    _, var = mean_and_variance(lam, geom, cost)
    return abs((up - down) / (2.0 * step) + var)


def integer_limit_check(m: int, delta: float) -> float:
    """Deviation of the r = m + delta optimizer from the r = m optimizer.

    Sums the largest pair-mass error |m_{2i-1} + m_{2i} - 1/n| and the
    largest distance of a paired point from its integer-grid partner.
    """
    if delta > 1e-4 or delta < 0:
        raise ValueError("delta must lie in [0, 1e-4]")
    ref = unconstrained_solution(make_geometry(m))
    geom = make_geometry(m + delta)
    near = unconstrained_solution(geom)
    if geom.is_integer:
        return float(np.max(np.abs(near.masses - ref.masses)) + np.max(np.abs(near.positions - ref.positions)))
    pair_mass = near.masses[0::2] + near.masses[1::2]
    mass_dev = np.max(np.abs(pair_mass - ref.masses))
    pos_dev = np.max(np.maximum(np.abs(near.positions[0::2] - ref.positions),
                                np.abs(near.positions[1::2] - ref.positions)))
    return float(mass_dev + pos_dev)


def removed_point_slack(solution, grid_size: int = 0) -> np.ndarray:
    """KKT slack at the dropped grid points x_2, ..., x_{2k} of a IIb solution."""
    k = solution.regime.k or 0
    geom, dist = solution.geometry, solution.distribution
    xs = geom.grid_positions()[1 : 2 * k : 2]
    if xs.size == 0:
        return np.zeros(0)
    info = mutual_information(dist, geom)
    dens = np.atleast_1d(marginal_information_density(xs, dist, geom))
    return info + solution.lambda_star * (solution.cost(xs) - solution.cbar) - dens


# ---------------------------------------------------------------------------
# Sweep helpers
# ---------------------------------------------------------------------------


def sweep_budgets(th: Thresholds, count: int = 12) -> np.ndarray:
    """``count`` budgets covering Case I and every support band below c̄*.

    One budget sits halfway through each band (theta_k, theta_{k-1}] with
    theta_{-1} = c̄*; one sits halfway between c̄* and 1; the rest are spread
    evenly over (0, c̄*).
    """
    cstar = th.cbar_star
    edges = np.concatenate(([cstar], th.theta, [0.0]))
    picks = [0.5 * (cstar + 1.0) if cstar < 1.0 else 1.0]
    if th.theta.size:
        picks.extend(0.5 * (edges[:-1] + edges[1:]))
    fill = count - len(picks)
    if fill < 0:
        raise ValueError(f"{count} budgets cannot cover {len(picks)} bands")
    picks.extend(cstar * (np.arange(fill) + 0.5) / fill)
    out = np.unique(np.asarray(picks, dtype=np.float64))
    # collisions are measure-zero but keep the count exact if they happen
    while out.size < count:
        out = np.unique(np.append(out, 0.5 * (out[0] + out[1])))
    return out


@dataclass(frozen=True)
class ClusterComparison:
    """Agreement between numerical support clusters and analytic mass points.

    Every cluster is assigned to its nearest analytic point. Per analytic
    point the assigned cluster masses are summed and their mass-weighted
    mean position compared with the point. Positions are measured in input
    cells and only checked for points heavier than ``mass_tol``; a point
    that light may legitimately have no cluster at all. The discretized
    optimum spreads each point over a comb of nearby cells, so single
    clusters are not required to sit within one cell.
    """

    mass_errors: np.ndarray
    position_errors: np.ndarray  # cells; nan where not checked
    mass_tol: float
    position_tol: float

    @property
    def max_mass_error(self) -> float:
        return float(self.mass_errors.max()) if self.mass_errors.size else 0.0

    @property
    def max_position_error(self) -> float:
        checked = self.position_errors[~np.isnan(self.position_errors)]
        return float(checked.max()) if checked.size else 0.0

    @property
    def passed(self) -> bool:
        return (self.max_mass_error <= self.mass_tol
                and self.max_position_error <= self.position_tol)


def compare_clusters(positions, masses, dist: DiscreteInputDistribution, cell: float,
                     mass_tol: float = 1e-3, position_tol: float = 1.0) -> ClusterComparison:
    """Match clusters (positions, masses) against an analytic distribution."""
    positions = np.asarray(positions, dtype=float)
    masses = np.asarray(masses, dtype=float)
    x, m = dist.positions, dist.masses
    k = x.size
    if positions.size:
        owner = np.argmin(np.abs(positions[:, None] - x[None, :]), axis=1)
    else:
        owner = np.zeros(0, dtype=int)
    got = np.bincount(owner, weights=masses, minlength=k)
    moment = np.bincount(owner, weights=masses * positions, minlength=k)
    pos_err = np.full(k, np.nan)
    heavy = m > mass_tol
    with np.errstate(invalid="ignore", divide="ignore"):
        centre = moment / got
    pos_err[heavy] = np.where(got[heavy] > 0, np.abs(centre[heavy] - x[heavy]) / cell, np.inf)
    return ClusterComparison(np.abs(got - m), pos_err, mass_tol, position_tol)
