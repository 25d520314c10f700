"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 2,
resource-guard trips exit 3, and every other failure exits 1.
"""


class ConfigurationError(ValueError):
    """A request or config file is malformed or inconsistent."""


class DomainError(ValueError):
    """A quantity was requested outside its domain of definition,
    e.g. a limiting Green function in a recurrent dimension."""


class ResourceLimitError(RuntimeError):
    """A computation would exceed a configured memory/size guard."""


class PrecisionLossError(RuntimeError):
    """A truncated summation cannot certify the requested accuracy."""


class DivergenceError(RuntimeError):
    """A limit was requested for a quantity whose partial sums show
    no sign of converging."""


class FitError(RuntimeError):
    """A regression has too few usable points to be meaningful."""
