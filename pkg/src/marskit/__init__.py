"""marskit: modular aerial robot assemblies as single virtual quadrotors.

Abstraction of rigidly docked quadrotor assemblies (equal-arm closed form and
wrench-polytope fit), minimum-variance thrust allocation, predictive wrench
control, rigid-body simulation, and docking-magnet layout search.
"""

from .errors import (
    CoincidentPoint,
    DegenerateConfig,
    InfeasibleAbstraction,
    InfeasibleWrench,
    MarskitError,
    NonFiniteState,
    ParseError,
    TargetUnreachable,
    TooManyUnits,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CoincidentPoint",
    "DegenerateConfig",
    "InfeasibleAbstraction",
    "InfeasibleWrench",
    "MarskitError",
    "NonFiniteState",
    "ParseError",
    "TargetUnreachable",
    "TooManyUnits",
    "ValidationError",
    "__version__",
]
