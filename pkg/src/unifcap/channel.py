"""Channel geometry, cost functions, distributions and information primitives.

The channel is Y = X + N with X confined to [0, 1] and N uniform on (-b, b).
Everything here works in natural logarithms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import entr

from .errors import (
    DegenerateInputError,
    InvalidCostError,
    InvalidDistributionError,
    NegativeMassError,
    NonPositiveRError,
)

EPS_INT = 1e-9
SUM_TOL = 1e-12
# breakpoints closer than this are the same point up to rounding
MERGE_TOL = 1e-12


def _frozen_array(values, dtype=np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChannelGeometry:
    """Inverse noise width r and the quantities derived from it.

    Values of r within ``eps_int`` of a positive integer are snapped onto
    that integer at construction, so ``r`` always equals ``1 / (2 b)`` and
    the integer formulas apply. The unsnapped value is kept in ``r_input``.
    """

    r: float
    eps_int: float = EPS_INT
    r_input: Optional[float] = None

    def __post_init__(self):
        if not np.isfinite(self.r) or self.r <= 0:
            raise NonPositiveRError(f"r must be positive and finite, got {self.r!r}")
        nearest = round(self.r)
        if nearest >= 1 and abs(self.r - nearest) < self.eps_int and self.r != nearest:
            object.__setattr__(self, "r_input", float(self.r))
            object.__setattr__(self, "r", float(nearest))
        else:
            object.__setattr__(self, "r", float(self.r))
            if self.r_input is None:
                object.__setattr__(self, "r_input", float(self.r))

    @property
    def b(self) -> float:
        return 0.5 / self.r

    @property
    def n(self) -> int:
        return math.floor(self.r) + 1

    @property
    def rho(self) -> float:
        return self.r - math.floor(self.r)

    @property
    def is_integer(self) -> bool:
        return self.rho < self.eps_int

    @property
    def n_points(self) -> int:
        """Number of mass points N_r of the unconstrained optimizer."""
        return self.n if self.is_integer else 2 * self.n

    def grid_positions(self) -> np.ndarray:
        """Positions x_1..x_{N_r} of the unconstrained support grid."""
        n, r = self.n, self.r
        if self.is_integer:
            return np.arange(n) / (n - 1)
        j = np.arange(1, 2 * n + 1)
        x = np.where(j % 2 == 1, (j - 1) / (2 * r), 1.0 - (2 * n - j) / (2 * r))
        x[0], x[-1] = 0.0, 1.0
        return x

    def as_dict(self) -> dict:
        return {
            "r": self.r,
            "b": self.b,
            "n": self.n,
            "rho": self.rho,
            "is_integer": self.is_integer,
            "n_points": self.n_points,
        }


def make_geometry(r: float, eps_int: float = EPS_INT) -> ChannelGeometry:
    """Build a validated channel geometry for inverse noise width ``r``."""
    return ChannelGeometry(float(r), eps_int=eps_int)


# ---------------------------------------------------------------------------
# Cost functions
# ---------------------------------------------------------------------------


class CurvatureKind(Enum):
    STRICTLY_CONCAVE = "StrictlyConcave"
    LINEAR = "Linear"
    CONVEX_ON_INTERVAL = "ConvexOnInterval"


@dataclass(frozen=True)
class Curvature:
    kind: CurvatureKind
    interval: Optional[tuple] = None  # only for CONVEX_ON_INTERVAL

    @classmethod
    def concave(cls) -> "Curvature":
        return cls(CurvatureKind.STRICTLY_CONCAVE)

    @classmethod
    def linear(cls) -> "Curvature":
        return cls(CurvatureKind.LINEAR)

    @classmethod
    def convex_on(cls, lo: float = 0.0, hi: float = 1.0) -> "Curvature":
        if not 0.0 <= lo < hi <= 1.0:
            raise InvalidCostError(f"bad convexity interval ({lo}, {hi})")
        return cls(CurvatureKind.CONVEX_ON_INTERVAL, (float(lo), float(hi)))

    @property
    def is_concave_or_linear(self) -> bool:
        return self.kind is not CurvatureKind.CONVEX_ON_INTERVAL

    def __str__(self) -> str:
        if self.interval is None:
            return self.kind.value
        return f"{self.kind.value}({self.interval[0]:g}, {self.interval[1]:g})"


@dataclass(frozen=True, eq=False)
class CostFunction:
    """Normalized, strictly increasing input cost on [0, 1].

    Use :meth:`power` for the family c(x) = x**alpha or :meth:`from_table`
    for tabulated costs. Calling the object evaluates c elementwise.
    """

    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    curvature: Curvature
    family: str = "callable"
    alpha: Optional[float] = None
    table: Optional[tuple] = field(default=None, repr=False)

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=np.float64))

    @property
    def is_linear(self) -> bool:
        return self.curvature.kind is CurvatureKind.LINEAR

    def describe(self) -> str:
        if self.family == "power":
            return f"power(alpha={self.alpha!r})"
        return self.family

    @classmethod
    def power(cls, alpha: float, validate: bool = True) -> "CostFunction":
        alpha = float(alpha)
        if not np.isfinite(alpha) or alpha <= 0:
            raise InvalidCostError(f"alpha must be positive, got {alpha!r}")
        if alpha == 1.0:
            curv = Curvature.linear()
        elif alpha < 1.0:
            curv = Curvature.concave()
        else:
            curv = Curvature.convex_on(0.0, 1.0)

        def evaluate(x, a=alpha):
            return np.power(np.clip(x, 0.0, 1.0), a)

        def derivative(x, a=alpha):
            with np.errstate(divide="ignore"):
                return a * np.power(np.clip(x, 0.0, 1.0), a - 1.0)

        cost = cls(evaluate, derivative, curv, family="power", alpha=alpha)
        if validate:
            cost.validate()
        return cost

    @classmethod
    def linear(cls) -> "CostFunction":
        return cls.power(1.0)

    @classmethod
    def from_callable(
        cls,
        func: Callable,
        curvature: Curvature,
        derivative: Optional[Callable] = None,
        validate: bool = True,
    ) -> "CostFunction":
        if derivative is None:
            h = 1e-6

            def derivative(x, f=func):
                lo = np.clip(x - h, 0.0, 1.0)
                hi = np.clip(x + h, 0.0, 1.0)
                return (f(hi) - f(lo)) / (hi - lo)

        cost = cls(func, derivative, curvature, family="callable")
        if validate:
            cost.validate()
        return cost

    @classmethod
    def from_table(
        cls,
        x: Sequence[float],
        c: Sequence[float],
        curvature: Optional[Curvature] = None,
    ) -> "CostFunction":
        """Piecewise-linear cost through the knots (x, c).

        The knots must be strictly ascending, start at 0 and end at 1, with
        strictly increasing values normalized to c(0)=0 and c(1)=1. When
        ``curvature`` is omitted it is inferred from the knot slopes.
        """
        xs = np.asarray(x, dtype=np.float64)
        cs = np.asarray(c, dtype=np.float64)
        if xs.ndim != 1 or xs.shape != cs.shape or xs.size < 2:
            raise InvalidCostError("table needs two equal-length columns with >= 2 rows")
        if not np.all(np.diff(xs) > 0):
            raise InvalidCostError("table x values must be strictly ascending")
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise InvalidCostError("table must include the endpoints x=0 and x=1")
        if abs(cs[0]) > 1e-12 or abs(cs[-1] - 1.0) > 1e-12:
            raise InvalidCostError("table must satisfy c(0)=0 and c(1)=1")
        if not np.all(np.diff(cs) > 0):
            raise InvalidCostError("table values must be strictly increasing")
        inferred = _table_curvature(xs, cs)
        if curvature is None:
            curvature = inferred
        elif not _curvature_compatible(curvature, inferred, xs, cs):
            raise InvalidCostError(
                f"declared curvature {curvature} contradicts table ({inferred})"
            )
        grad = np.gradient(cs, xs)
        xs.flags.writeable = False
        cs.flags.writeable = False

        def evaluate(t, xs=xs, cs=cs):
            return np.interp(t, xs, cs)

        def derivative(t, xs=xs, grad=grad):
            return np.interp(t, xs, grad)

        return cls(evaluate, derivative, curvature, family="table", table=(xs, cs))

    def validate(self, n_samples: int = 1024, tol: float = 1e-10) -> None:
        """Check normalization, monotonicity and the declared curvature."""
        ends = self(np.array([0.0, 1.0]))
        if abs(ends[0]) > 1e-12 or abs(ends[1] - 1.0) > 1e-12:
            raise InvalidCostError(f"cost must satisfy c(0)=0, c(1)=1; got {ends}")
        mids = (np.arange(n_samples) + 0.5) / n_samples
        d = self.derivative(mids)
        if not np.all(d > 0):
            raise InvalidCostError("cost derivative must be positive on [0, 1]")
        if self.table is not None:
            return
        xs = np.linspace(0.0, 1.0, n_samples)
        second = np.diff(self(xs), 2)
        inner = xs[1:-1]
        kind = self.curvature.kind
        if kind is CurvatureKind.STRICTLY_CONCAVE:
            ok = np.all(second <= tol)
        elif kind is CurvatureKind.LINEAR:
            ok = np.all(np.abs(second) <= tol)
        else:
            lo, hi = self.curvature.interval
            sel = (inner >= lo) & (inner <= hi)
            ok = np.all(second[sel] >= -tol)
        if not ok:
            raise InvalidCostError(f"sampled second differences contradict {self.curvature}")


def _table_curvature(xs: np.ndarray, cs: np.ndarray, tol: float = 1e-10) -> Curvature:
    slopes = np.diff(cs) / np.diff(xs)
    ds = np.diff(slopes)
    if ds.size == 0 or np.all(np.abs(ds) <= tol):
        return Curvature.linear()
    convex = np.flatnonzero(ds > tol)
    if convex.size == 0:
        return Curvature.concave()
    # ds[i] is the slope change at knot i+1; the convex stretch spans the
    # neighbouring segments of every such knot
    lo = xs[convex[0]]
    hi = xs[convex[-1] + 2]
    return Curvature.convex_on(lo, hi)


def _curvature_compatible(declared: Curvature, inferred: Curvature, xs, cs) -> bool:
    if declared.kind is inferred.kind is CurvatureKind.CONVEX_ON_INTERVAL:
        return True
    if declared.kind is CurvatureKind.STRICTLY_CONCAVE:
        return inferred.kind in (CurvatureKind.STRICTLY_CONCAVE, CurvatureKind.LINEAR)
    return declared.kind is inferred.kind


def load_cost_table(path, curvature: Optional[Curvature] = None) -> CostFunction:
    """Read a two-column CSV of (x, c(x)) rows; '#' lines are comments."""
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise InvalidCostError(f"{path}: expected two columns, got {data.shape[1]}")
    return CostFunction.from_table(data[:, 0], data[:, 1], curvature)


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteInputDistribution:
    """Finite mixture of point masses on [0, 1].

    ``labels`` optionally records the 1-based index of each point on the
    unconstrained grid, which lets callers tell which grid points are absent.
    """

    positions: np.ndarray
    masses: np.ndarray
    labels: Optional[tuple] = None

    def __post_init__(self):
        x = _frozen_array(self.positions)
        m = _frozen_array(self.masses)
        if x.size == 0 or x.shape != m.shape:
            raise InvalidDistributionError("positions and masses must be non-empty and equal length")
        if np.any(~np.isfinite(x)) or x[0] < 0.0 or x[-1] > 1.0:
            raise InvalidDistributionError("positions must lie in [0, 1]")
        if np.any(np.diff(x) <= 0):
            raise InvalidDistributionError("positions must be strictly ascending")
        if np.any(m < 0) or np.any(~np.isfinite(m)):
            raise NegativeMassError("masses must be nonnegative and finite")
        if abs(m.sum() - 1.0) > SUM_TOL:
            raise InvalidDistributionError(f"masses sum to {m.sum()!r}, expected 1")
        if self.labels is not None and len(self.labels) != x.size:
            raise InvalidDistributionError("labels must match positions in length")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "masses", m)
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))

    def __len__(self) -> int:
        return self.positions.size

    @classmethod
    def point_mass(cls, x: float = 0.0) -> "DiscreteInputDistribution":
        return cls(np.array([x]), np.array([1.0]))

    @classmethod
    def normalized(cls, positions, weights, labels=None) -> "DiscreteInputDistribution":
        """Build from nonnegative weights, renormalizing them to sum 1."""
        w = np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise NegativeMassError("weights must be nonnegative")
        return cls(np.asarray(positions, dtype=np.float64), w / w.sum(), labels)

    def with_masses(self, masses) -> "DiscreteInputDistribution":
        return DiscreteInputDistribution(self.positions, masses, self.labels)


@dataclass(frozen=True, eq=False)
class PiecewiseConstantDensity:
    """Density equal to ``heights[k]`` on [breakpoints[k], breakpoints[k+1])."""

    breakpoints: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        y = _frozen_array(self.breakpoints)
        h = _frozen_array(self.heights)
        if y.size != h.size + 1 or h.size == 0:
            raise InvalidDistributionError("need len(breakpoints) == len(heights) + 1")
        if np.any(np.diff(y) <= 0):
            raise InvalidDistributionError("breakpoints must be strictly ascending")
        if np.any(h < 0):
            raise NegativeMassError("density heights must be nonnegative")
        object.__setattr__(self, "breakpoints", y)
        object.__setattr__(self, "heights", h)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def integral(self) -> float:
        return float(np.dot(self.widths, self.heights))

    def __call__(self, y):
        y = np.asarray(y, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, y, side="right") - 1
        inside = (idx >= 0) & (idx < self.heights.size)
        out = np.zeros(y.shape)
        out[inside] = self.heights[idx[inside]]
        return out


@dataclass(frozen=True, eq=False)
class GriddedDensity:
    """Probabilities attached to uniformly spaced cell centers."""

    centers: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        c = _frozen_array(self.centers)
        p = _frozen_array(self.probabilities)
        if c.shape != p.shape or c.size < 2:
            raise InvalidDistributionError("need >= 2 cells with matching probabilities")
        step = np.diff(c)
        if np.any(step <= 0) or np.ptp(step) > 1e-9 * step[0]:
            raise InvalidDistributionError("cell centers must be uniformly spaced")
        if np.any(p < 0):
            raise NegativeMassError("cell probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise InvalidDistributionError(f"cell probabilities sum to {p.sum()!r}")
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "probabilities", p)

    @property
    def spacing(self) -> float:
        return float(self.centers[1] - self.centers[0])

    def to_discrete(self) -> DiscreteInputDistribution:
        """Treat each cell as a point mass at its center."""
        return DiscreteInputDistribution(
            np.clip(self.centers, 0.0, 1.0), self.probabilities / self.probabilities.sum()
        )


# ---------------------------------------------------------------------------
# Information primitives
# ---------------------------------------------------------------------------


def _merge_close(values: np.ndarray, tol: float = MERGE_TOL) -> np.ndarray:
    values = np.sort(values)
    keep = np.concatenate(([True], np.diff(values) > tol))
    return values[keep]


def output_density(dist: DiscreteInputDistribution, geom: ChannelGeometry) -> PiecewiseConstantDensity:
    """Exact output density: the input masses convolved with the uniform kernel."""
    x, m, b = dist.positions, dist.masses, geom.b
    y = _merge_close(np.concatenate((x - b, x + b)))
    mid = 0.5 * (y[:-1] + y[1:])
    # points with |mid - x_j| < b occupy the index range [lo, hi)
    hi = np.searchsorted(x, mid + b, side="left")
    lo = np.searchsorted(x, mid - b, side="right")
    # direct sums keep tiny heights accurate; cumsum differences would not
    covered = np.zeros(mid.size)
    for offset in range(int(np.max(hi - lo, initial=0))):
        idx = lo + offset
        valid = idx < hi
        covered[valid] += m[idx[valid]]
    return PiecewiseConstantDensity(y, geom.r * covered)


def _log_profile(pY: PiecewiseConstantDensity, b: float):
    """Cumulative integrals of log(2b p_Y) and of the zero-density length."""
    y, h = pY.breakpoints, pY.heights
    w = np.diff(y)
    positive = h > 0
    logs = np.zeros_like(h)
    logs[positive] = np.log(2.0 * b * h[positive])
    zero_len = np.where(positive, 0.0, 1.0)
    G = np.concatenate(([0.0], np.cumsum(w * logs)))
    Z = np.concatenate(([0.0], np.cumsum(w * zero_len)))
    return y, logs, zero_len, G, Z


def _cumulative_at(t, y, slope, cum):
    idx = np.clip(np.searchsorted(y, t, side="right") - 1, 0, slope.size - 1)
    t = np.clip(t, y[0], y[-1])
    return cum[idx] + (t - y[idx]) * slope[idx]


def marginal_information_density(x, dist: DiscreteInputDistribution, geom: ChannelGeometry,
                                 pY: Optional[PiecewiseConstantDensity] = None):
    """Information density i(x) = -(1/2b) * integral of log(2b p_Y) over [x-b, x+b].

    Exact segment-overlap integration. Returns +inf where the window meets a
    region of zero output density with positive length. Accepts scalar or
    array ``x``.
    """
    if pY is None:
        pY = output_density(dist, geom)
    b = geom.b
    y, logs, zero_len, G, Z = _log_profile(pY, b)
    t = np.asarray(x, dtype=np.float64)
    lo, hi = t - b, t + b
    integral = _cumulative_at(hi, y, logs, G) - _cumulative_at(lo, y, logs, G)
    # parts of the window outside the support of p_Y also carry zero density
    outside = np.clip(y[0] - lo, 0.0, None) + np.clip(hi - y[-1], 0.0, None)
    zeros = _cumulative_at(hi, y, zero_len, Z) - _cumulative_at(lo, y, zero_len, Z) + outside
    val = -geom.r * integral
    val = np.where(zeros > MERGE_TOL, np.inf, val)
    return float(val) if np.ndim(val) == 0 else val


def mutual_information(dist: DiscreteInputDistribution, geom: ChannelGeometry,
                       method: str = "density") -> float:
    """Mutual information I(X;Y) in nats.

    ``method="density"`` sums m_j i(x_j); ``method="entropy"`` uses
    h(Y) - log(2b). Both are exact for point-mass inputs.
    """
    pY = output_density(dist, geom)
    if method == "entropy":
        return differential_entropy(pY) - math.log(2.0 * geom.b)
    if method != "density":
        raise ValueError(f"unknown method {method!r}")
    support = dist.masses > 0
    dens = marginal_information_density(dist.positions[support], dist, geom, pY)
    dens = np.atleast_1d(dens)
    if np.any(~np.isfinite(dens)):
        raise DegenerateInputError("information density is infinite on the support")
    return float(np.dot(dist.masses[support], dens))


def entropy(masses) -> float:
    """Shannon entropy -sum m log m with 0 log 0 = 0."""
    m = np.asarray(masses, dtype=np.float64)
    if np.any(m < 0):
        raise NegativeMassError("entropy needs nonnegative masses")
    return float(np.sum(entr(m)))


def expected_cost(dist: DiscreteInputDistribution, cost: CostFunction) -> float:
    return float(np.dot(dist.masses, cost(dist.positions)))


def differential_entropy(pY: PiecewiseConstantDensity) -> float:
    """-integral p log p for a piecewise-constant density."""
    return float(np.dot(pY.widths, entr(pY.heights)))
