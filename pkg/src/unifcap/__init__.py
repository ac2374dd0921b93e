"""Capacity of the additive uniform noise channel under amplitude and cost constraints."""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    AnalyticSolution,
    Regime,
    RegimeKind,
    Thresholds,
    classify,
    solve,
    thresholds,
    unconstrained_solution,
)
from .channel import (  # noqa: E402
    ChannelGeometry,
    CostFunction,
    DiscreteInputDistribution,
    make_geometry,
    marginal_information_density,
    mutual_information,
    output_density,
)
from .numerical import (  # noqa: E402
    BAConfig,
    BAResult,
    ba_fixed_lambda,
    ba_solve,
    discretize,
    extract_support,
)
from .verification import compare_clusters, kkt_report, perturb_mass  # noqa: E402

__all__ = [
    "AnalyticSolution", "Regime", "RegimeKind", "Thresholds", "classify", "solve", "thresholds",
    "unconstrained_solution",
    "ChannelGeometry", "CostFunction", "DiscreteInputDistribution", "make_geometry",
    "marginal_information_density", "mutual_information", "output_density",
    "BAConfig", "BAResult", "ba_fixed_lambda", "ba_solve", "discretize", "extract_support",
    "compare_clusters", "kkt_report", "perturb_mass",
]
