"""Exception types shared across the package."""


class MarskitError(Exception):
    """Base class for all package errors."""


class ParseError(MarskitError):
    """Configuration document is malformed (bad JSON, missing keys, wrong shapes)."""


class ValidationError(MarskitError):
    """Configuration parsed but violates a physical or structural constraint."""


class DegenerateConfig(MarskitError):
    """Rotor geometry leaves one of the grouped torque sums at zero, so no
    full-rank virtual quadrotor exists."""


class TooManyUnits(MarskitError):
    """Vertex enumeration requested for more units than the enumeration cap allows."""


class InfeasibleAbstraction(MarskitError):
    """The containment program has no feasible virtual quadrotor."""


class InfeasibleWrench(MarskitError):
    """Requested wrench lies outside the assembly's feasible polytope.

    The allocator does not raise this during normal operation; it returns the
    torque-scaling fallback with ``feasible=False``.  The type exists for callers
    that want strict behaviour.
    """


class CoincidentPoint(MarskitError):
    """Field evaluation point coincides with a magnet centre."""


class TargetUnreachable(MarskitError):
    """The layer-wise magnet search exhausted the lattice without reaching the
    requested field strength.  ``arrangement`` and ``history`` carry the best
    result found so the caller can still use it."""

    def __init__(self, message, arrangement=None, history=None):
        super().__init__(message)
        self.arrangement = arrangement
        self.history = history


class NonFiniteState(MarskitError):
    """A state or command stopped being finite during integration or control."""
