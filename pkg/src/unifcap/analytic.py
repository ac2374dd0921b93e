"""Closed-form capacity-achieving inputs for concave and linear costs.

Index conventions follow the 1-based labelling of the unconstrained grid
x_1 < ... < x_{N_r}. Arrays are 0-based, so ``x[j - 1]`` holds x_j.

For non-integer r the output density alternates between segments of height
r * mhat_j (length rho / r) and r * mbar_j (length (1 - rho) / r), with

    mhat_1 = m_1, mhat_j = m_{2j-2} + m_{2j-1} (j = 2..n), mhat_{n+1} = m_{2n}
    mbar_j = m_{2j-1} + m_{2j}                 (j = 1..n).

Regime k keeps the support S_k, which drops x_2, x_4, ..., x_{2k}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp, softmax

from .channel import (
    ChannelGeometry,
    CostFunction,
    CurvatureKind,
    DiscreteInputDistribution,
    entropy,
    expected_cost,
)
from .errors import (
    AnalyticUnavailableError,
    BracketFailureError,
    InfeasibleSupportError,
    InvalidBudgetError,
    InvalidKError,
    NoRootFoundError,
    WrongRegimeError,
)

LAMBDA_CAP = 1e8
NEG_MASS_TOL = 1e-12
COST_TOL = 1e-11
THRESHOLD_RTOL = 1e-13


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


class RegimeKind(Enum):
    CASE_I = "I"
    CASE_IIA = "IIa"
    CASE_IIB = "IIb"
    CASE_III = "III"


@dataclass(frozen=True)
class Regime:
    kind: RegimeKind
    k: Optional[int] = None

    @classmethod
    def case_i(cls):
        return cls(RegimeKind.CASE_I)

    @classmethod
    def case_iia(cls):
        return cls(RegimeKind.CASE_IIA)

    @classmethod
    def case_iib(cls, k: int):
        return cls(RegimeKind.CASE_IIB, int(k))

    @classmethod
    def case_iii(cls):
        return cls(RegimeKind.CASE_III)

    @classmethod
    def parse(cls, label: str) -> "Regime":
        label = label.strip()
        if label.startswith("IIb(") and label.endswith(")"):
            return cls.case_iib(int(label[4:-1]))
        return cls(RegimeKind(label))

    @property
    def label(self) -> str:
        if self.kind is RegimeKind.CASE_IIB:
            return f"IIb({self.k})"
        return self.kind.value

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True, eq=False)
class Exponents:
    """Boltzmann energies of the combined masses for support S_k.

    ``dhat[i]`` is dhat_{k+1+i} for i = 0..n-k and ``dbar[i]`` is
    dbar_{k+1+i} for i = 0..n-k-1.
    """

    k: int
    dhat: np.ndarray
    dbar: np.ndarray


@dataclass(frozen=True, eq=False)
class CombinedMasses:
    """Combined masses on X>_k and the left-set masses on X<_k.

    ``mhat`` / ``mbar`` are indexed like :class:`Exponents`; ``left`` holds
    m_1, m_3, ..., m_{2k-1}.
    """

    k: int
    mhat: np.ndarray
    mbar: np.ndarray
    m_less: float
    m_greater: float
    left: np.ndarray


@dataclass(frozen=True, eq=False)
class Thresholds:
    """Critical budget and the support-change points theta_0 > theta_1 > ...

    ``lambda_at_theta[k]`` is lambda_k. For a linear cost there are no
    finite thresholds; ``theta`` is empty and the lambdas are +inf.
    """

    cbar_star: float
    theta: np.ndarray
    lambda_at_theta: np.ndarray

    def band(self, cbar: float) -> int:
        """Support index k with cbar in (theta_k, theta_{k-1}]."""
        return int(np.count_nonzero(self.theta >= cbar))


@dataclass(frozen=True, eq=False)
class AnalyticSolution:
    regime: Regime
    distribution: DiscreteInputDistribution
    lambda_star: float
    capacity_nats: float
    cbar: float
    geometry: ChannelGeometry
    cost: CostFunction
    thresholds: Optional[Thresholds] = None
    combined: Optional[CombinedMasses] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def expected_cost(self) -> float:
        return expected_cost(self.distribution, self.cost)

    def grid_masses(self) -> np.ndarray:
        """Masses on the full unconstrained grid, zero where dropped."""
        full = np.zeros(self.geometry.n_points)
        full[np.asarray(self.distribution.labels) - 1] = self.distribution.masses
        return full


# ---------------------------------------------------------------------------
# Case I and the integer case
# ---------------------------------------------------------------------------


def unconstrained_solution(geom: ChannelGeometry) -> DiscreteInputDistribution:
    """Capacity-achieving input without a cost constraint."""
    n = geom.n
    x = geom.grid_positions()
    if geom.is_integer:
        m = np.full(n, 1.0 / n)
    else:
        j = np.arange(1, 2 * n + 1)
        m = np.where(j % 2 == 1, 2 * n - j + 1, j) / (2.0 * n * (n + 1))
    return DiscreteInputDistribution(x, m, labels=tuple(range(1, x.size + 1)))


def cbar_star(geom: ChannelGeometry, cost: CostFunction) -> float:
    """Budget above which the cost constraint is inactive."""
    return expected_cost(unconstrained_solution(geom), cost)


def _boltzmann(lam: float, energies: np.ndarray) -> np.ndarray:
    return softmax(-lam * np.asarray(energies, dtype=np.float64))


def integer_masses(lam: float, geom: ChannelGeometry, cost: CostFunction) -> DiscreteInputDistribution:
    """Boltzmann masses m_j proportional to exp(-lam c(x_j)) on the integer grid."""
    if not geom.is_integer:
        raise WrongRegimeError("integer_masses needs integer r")
    x = geom.grid_positions()
    m = _boltzmann(lam, cost(x))
    return DiscreteInputDistribution(x, m / m.sum(), labels=tuple(range(1, x.size + 1)))


# ---------------------------------------------------------------------------
# Non-integer case: exponents, splits, combined masses
# ---------------------------------------------------------------------------


def _check_k(k: int, geom: ChannelGeometry, lo: int = 0) -> None:
    if geom.is_integer:
        raise WrongRegimeError("combined masses exist only for non-integer r")
    if not lo <= k <= geom.n - 1:
        raise InvalidKError(f"k must lie in [{lo}, {geom.n - 1}], got {k}")


def exponents(k: int, geom: ChannelGeometry, cost: CostFunction) -> Exponents:
    """Cumulative normalized cost steps dhat_j, dbar_j for support S_k."""
    _check_k(k, geom)
    n, rho = geom.n, geom.rho
    c = cost(geom.grid_positions())
    odd, even = c[0::2], c[1::2]  # c_{2i-1}, c_{2i} for i = 1..n
    step_hat = (even - odd) / rho  # i = 1..n
    step_bar = (odd[1:] - even[:-1]) / (1.0 - rho)  # i = 1..n-1
    dhat = np.concatenate(([0.0], np.cumsum(step_hat[k:])))
    dbar = np.concatenate(([0.0], np.cumsum(step_bar[k:])))
    assert dhat.size == n - k + 1 and dbar.size == n - k
    return Exponents(k, dhat, dbar)


def _log_split_ratio(k: int, lam: float, geom: ChannelGeometry, cost: CostFunction,
                     ex: Exponents) -> float:
    """log(M<_k / M>_k)."""
    c = cost(geom.grid_positions())
    rho = geom.rho
    log_z = logsumexp(-lam * c[0 : 2 * k : 2])
    log_zhat = logsumexp(-lam * ex.dhat)
    log_zbar = logsumexp(-lam * ex.dbar)
    return lam * (c[2 * k] - c[0]) + log_z - rho * log_zhat - (1.0 - rho) * log_zbar


def normalization_split(k: int, lam: float, geom: ChannelGeometry, cost: CostFunction):
    """Split (M<_k, M>_k) of the total mass between X<_k and X>_k."""
    _check_k(k, geom, lo=1)
    ex = exponents(k, geom, cost)
    t = _log_split_ratio(k, lam, geom, cost, ex)
    return float(expit(t)), float(expit(-t))


def combined_masses(k: int, lam: float, geom: ChannelGeometry, cost: CostFunction,
                    ex: Optional[Exponents] = None) -> CombinedMasses:
    _check_k(k, geom)
    if ex is None:
        ex = exponents(k, geom, cost)
    if k == 0:
        m_less, m_greater = 0.0, 1.0
        left = np.zeros(0)
    else:
        t = _log_split_ratio(k, lam, geom, cost, ex)
        m_less, m_greater = float(expit(t)), float(expit(-t))
        c_left = cost(geom.grid_positions())[0 : 2 * k : 2]
        left = m_less * _boltzmann(lam, c_left)
    mhat = m_greater * _boltzmann(lam, ex.dhat)
    mbar = m_greater * _boltzmann(lam, ex.dbar)
    return CombinedMasses(k, mhat, mbar, m_less, m_greater, left)


def back_transform(cm: CombinedMasses, check: bool = True) -> np.ndarray:
    """Point masses m_{2k+1}, ..., m_{2n} of X>_k from the combined masses.

    Uses m_{2l-1} = mhat_l - m_{2l-2} and m_{2l} = mbar_l - m_{2l-1}, starting
    from m_{2k} := 0, which is the alternating cumulative-sum form.
    Raises InfeasibleSupportError if a mass is below -1e-12.
    """
    mhat, mbar = cm.mhat, cm.mbar
    count = mbar.size
    out = np.empty(2 * count)
    prev_even = 0.0
    for i in range(count):
        odd = mhat[i] - prev_even
        even = mbar[i] - odd
        out[2 * i], out[2 * i + 1] = odd, even
        prev_even = even
    if check and np.any(out < -NEG_MASS_TOL):
        j = cm.k * 2 + 1 + int(np.argmin(out))
        raise InfeasibleSupportError(f"mass m_{j} = {out.min():.3e} is negative for k = {cm.k}")
    return out


def support_labels(k: int, geom: ChannelGeometry) -> tuple:
    """1-based grid labels of S_k: x_1, x_3, ..., x_{2k-1}, then x_{2k+1}..x_{2n}."""
    return tuple(range(1, 2 * k, 2)) + tuple(range(2 * k + 1, 2 * geom.n + 1))


def regime_distribution(k: int, lam: float, geom: ChannelGeometry, cost: CostFunction,
                        check: bool = True):
    """Distribution on S_k at multiplier ``lam`` plus its combined masses."""
    cm = combined_masses(k, lam, geom, cost)
    right = back_transform(cm, check=check)
    masses = np.clip(np.concatenate((cm.left, right)), 0.0, None)
    labels = support_labels(k, geom)
    x = geom.grid_positions()[np.asarray(labels) - 1]
    dist = DiscreteInputDistribution(x, masses / masses.sum(), labels)
    return dist, cm


def _regime_cost(k: int, lam: float, geom: ChannelGeometry, cost: CostFunction) -> float:
    cm = combined_masses(k, lam, geom, cost)
    right = back_transform(cm, check=False)
    masses = np.concatenate((cm.left, right))
    labels = np.asarray(support_labels(k, geom))
    return float(np.dot(masses, cost(geom.grid_positions()[labels - 1])))


# ---------------------------------------------------------------------------
# Thresholds
# ---------------------------------------------------------------------------


def _threshold_gap(lam: float, ex: Exponents) -> float:
    """(zhat' - zbar') scaled by exp(lam dbar_{k+2}); same sign, no underflow."""
    shift = ex.dbar[1]
    hat = np.exp(-lam * (ex.dhat[1:] - shift)).sum()
    bar = np.exp(-lam * (ex.dbar[1:] - shift)).sum()
    return hat - bar


def lambda_threshold(k: int, geom: ChannelGeometry, cost: CostFunction,
                     lam_prev: float = 0.0, lam_cap: float = LAMBDA_CAP) -> float:
    """Multiplier lambda_k at which m_{2k+2} vanishes (zhat' = zbar')."""
    if not cost.curvature.is_concave_or_linear:
        raise WrongRegimeError("thresholds need a concave or linear cost")
    _check_k(k, geom)
    if k > geom.n - 2:
        raise InvalidKError(f"thresholds exist for k <= n-2 = {geom.n - 2}")
    if cost.is_linear:
        return math.inf
    ex = exponents(k, geom, cost)
    lo = float(lam_prev)
    if _threshold_gap(lo, ex) <= 0.0:
        return lo
    hi = max(2.0 * lo, 1.0)
    while _threshold_gap(hi, ex) > 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > lam_cap:
            raise NoRootFoundError(f"lambda_{k} exceeds the cap {lam_cap:g}")
    return brentq(_threshold_gap, lo, hi, args=(ex,), xtol=1e-300, rtol=THRESHOLD_RTOL,
                  maxiter=500)


def thresholds(geom: ChannelGeometry, cost: CostFunction, lam_cap: float = LAMBDA_CAP) -> Thresholds:
    """All lambda_k and theta_k for k = 0..n-2, plus the critical budget."""
    cstar = cbar_star(geom, cost)
    if geom.is_integer:
        return Thresholds(cstar, np.zeros(0), np.zeros(0))
    if cost.is_linear:
        return Thresholds(cstar, np.zeros(0), np.full(geom.n - 1, math.inf))
    if not cost.curvature.is_concave_or_linear:
        raise WrongRegimeError("thresholds need a concave or linear cost")
    lams, thetas = [], []
    lam_prev = 0.0
    for k in range(geom.n - 1):
        lam_k = lambda_threshold(k, geom, cost, lam_prev, lam_cap)
        lams.append(lam_k)
        thetas.append(_regime_cost(k, lam_k, geom, cost))
        lam_prev = lam_k
    return Thresholds(cstar, np.array(thetas), np.array(lams))


# ---------------------------------------------------------------------------
# Classification and lambda*
# ---------------------------------------------------------------------------


def classify(geom: ChannelGeometry, cost: CostFunction, cbar: float,
             th: Optional[Thresholds] = None) -> Regime:
    if not 0.0 < cbar <= 1.0:
        raise InvalidBudgetError(f"budget must lie in (0, 1], got {cbar!r}")
    cstar = th.cbar_star if th is not None else cbar_star(geom, cost)
    if cbar >= cstar:
        return Regime.case_i()
    if not cost.curvature.is_concave_or_linear:
        return Regime.case_iii()
    if geom.is_integer:
        return Regime.case_iia()
    if cost.is_linear:
        return Regime.case_iib(0)
    if th is None:
        th = thresholds(geom, cost)
    return Regime.case_iib(th.band(cbar))


def _solve_monotone(f, lo: float, hi: Optional[float], lam_cap: float) -> float:
    """Root of a decreasing f on [lo, hi]; hi=None means grow a bracket."""
    f_lo = f(lo)
    if f_lo <= 0.0:
        return lo
    if hi is None or not math.isfinite(hi):
        hi = max(2.0 * lo, 1.0)
        while f(hi) > 0.0:
            lo, hi = hi, 2.0 * hi
            if hi > lam_cap:
                raise BracketFailureError(f"multiplier bracket exceeded cap {lam_cap:g}")
    elif f(hi) >= 0.0:
        return hi
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


def solve_lambda_star(geom: ChannelGeometry, cost: CostFunction, cbar: float, regime: Regime,
                      th: Optional[Thresholds] = None, lam_cap: float = LAMBDA_CAP) -> float:
    """Unique multiplier whose regime solution spends exactly ``cbar``."""
    if regime.kind is RegimeKind.CASE_IIA:
        c = cost(geom.grid_positions())

        def excess(lam):
            return float(np.dot(_boltzmann(lam, c), c)) - cbar

        return _solve_monotone(excess, 0.0, None, lam_cap)
    if regime.kind is not RegimeKind.CASE_IIB:
        raise WrongRegimeError(f"no multiplier search for regime {regime}")
    k = regime.k
    if cost.is_linear:
        lo, hi = 0.0, None
    else:
        if th is None:
            th = thresholds(geom, cost, lam_cap)
        lo = 0.0 if k == 0 else float(th.lambda_at_theta[k - 1])
        hi = float(th.lambda_at_theta[k]) if k < geom.n - 1 else None

    def excess(lam):
        return _regime_cost(k, lam, geom, cost) - cbar

    return _solve_monotone(excess, lo, hi, lam_cap)


# ---------------------------------------------------------------------------
# Full solve and capacity
# ---------------------------------------------------------------------------


def solve(geom: ChannelGeometry, cost: CostFunction, cbar: float,
          th: Optional[Thresholds] = None, lam_cap: float = LAMBDA_CAP) -> AnalyticSolution:
    """Capacity-achieving input for a concave or linear cost, any budget."""
    if not 0.0 < cbar <= 1.0:
        raise InvalidBudgetError(f"budget must lie in (0, 1], got {cbar!r}")
    if th is None and cost.curvature.is_concave_or_linear:
        th = thresholds(geom, cost, lam_cap)
    regime = classify(geom, cost, cbar, th)
    combined = None
    if regime.kind is RegimeKind.CASE_III:
        raise AnalyticUnavailableError(
            "convex cost with an active budget has no closed form; use the numerical solver"
        )
    if regime.kind is RegimeKind.CASE_I:
        lam = 0.0
        dist = unconstrained_solution(geom)
    elif regime.kind is RegimeKind.CASE_IIA:
        lam = solve_lambda_star(geom, cost, cbar, regime, th, lam_cap)
        dist = integer_masses(lam, geom, cost)
    else:
        lam = solve_lambda_star(geom, cost, cbar, regime, th, lam_cap)
        dist, combined = regime_distribution(regime.k, lam, geom, cost)
    sol = AnalyticSolution(regime, dist, lam, 0.0, cbar, geom, cost, th, combined)
    cap = capacity_analytic(sol, geom)
    object.__setattr__(sol, "capacity_nats", cap)
    sol.diagnostics["cost_residual"] = sol.expected_cost - min(cbar, th.cbar_star if th else cbar)
    return sol


def capacity_analytic(solution: AnalyticSolution, geom: ChannelGeometry) -> float:
    """Capacity in nats from the closed forms of each regime."""
    kind = solution.regime.kind
    n, rho = geom.n, geom.rho
    if kind is RegimeKind.CASE_I:
        if geom.is_integer:
            return math.log(n)
        return rho * math.log(n + 1) + (1.0 - rho) * math.log(n)
    if kind is RegimeKind.CASE_IIA:
        return entropy(solution.distribution.masses)
    if kind is RegimeKind.CASE_IIB:
        mhat, mbar = full_combined(solution)
        return rho * entropy(mhat) + (1.0 - rho) * entropy(mbar)
    raise WrongRegimeError(f"no closed-form capacity for regime {solution.regime}")


def full_combined(solution: AnalyticSolution):
    """Full vectors mhat_1..mhat_{n+1} and mbar_1..mbar_n of a IIb solution.

    For j <= k both equal m_{2j-1}, the mass of the isolated left point.
    """
    m = solution.grid_masses()
    n = solution.geometry.n
    odd, even = m[0::2], m[1::2]
    mhat = np.empty(n + 1)
    mhat[0] = odd[0]
    mhat[1:n] = even[:-1] + odd[1:]
    mhat[n] = even[-1]
    mbar = odd + even
    return mhat, mbar
