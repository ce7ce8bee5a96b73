"""Exception types shared across the package."""


class VagueMMError(Exception):
    """Base class for all package errors."""


class ZeroMass(VagueMMError, ValueError):
    """Raised when an operation needs a space (or law) of positive mass."""


class InvalidMetric(VagueMMError, ValueError):
    """Raised when a distance matrix violates the metric axioms."""


class BudgetExceeded(VagueMMError, RuntimeError):
    """Raised when an exact computation would exceed its term budget."""


class UnboundedTestFunction(VagueMMError, ValueError):
    """Raised when a test function cannot be certified bounded and continuous."""


class NonPositiveMoment(VagueMMError, ValueError):
    pass


class PreconditionViolated(VagueMMError, ValueError):
    pass


class DegenerateGrid(VagueMMError, ValueError):
    """Raised when no threshold of a grid qualifies during extraction."""
