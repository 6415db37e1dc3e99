"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class ElastifitError(Exception):
    """Base class for all package-specific errors."""


class DataError(ElastifitError, ValueError):
    """Invalid input data: bad shapes, nonpositive prices, fractional counts."""


class ConfigError(ElastifitError, ValueError):
    """Invalid configuration: rank/tolerance/fold-count out of range."""


class ConvergenceError(ElastifitError, RuntimeError):
    """A fitting procedure could not produce a usable result."""


class UnboundedObjectiveError(ConvergenceError):
    """The full-rank likelihood grows without bound on degenerate data."""
