"""Exception hierarchy shared by all solver modules."""


class UnifcapError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveRError(UnifcapError, ValueError):
    """Inverse noise width must be strictly positive."""


class NegativeMassError(UnifcapError, ValueError):
    """A probability vector contains a negative entry."""


class InvalidDistributionError(UnifcapError, ValueError):
    """Positions or masses violate the distribution invariants."""


class InvalidCostError(UnifcapError, ValueError):
    """Cost function violates normalization, monotonicity or curvature."""


class DegenerateInputError(UnifcapError, ValueError):
    """Information density is infinite at a support point."""


class InvalidKError(UnifcapError, ValueError):
    """Support index k is outside the admissible range."""


class InvalidBudgetError(UnifcapError, ValueError):
    """Cost budget must lie in (0, 1]."""


class InfeasibleSupportError(UnifcapError):
    """Back transform produced a negative mass on the requested support."""


class NumericalFailure(UnifcapError):
    """Base class for root-finding and iteration failures."""


class NoRootFoundError(NumericalFailure):
    """Threshold equation has no root below the multiplier cap."""


class BracketFailureError(NumericalFailure):
    """Bracket doubling for the multiplier exceeded its cap."""


class NotConvergedError(NumericalFailure):
    """Iterative solver exhausted its iteration budget."""


class AnalyticUnavailableError(UnifcapError):
    """No closed form exists for this regime; use the numerical solver."""


class WrongRegimeError(UnifcapError, ValueError):
    """Operation does not apply to the given regime."""


class GridTooCoarseError(UnifcapError, ValueError):
    """Output cells are wider than the noise kernel."""
