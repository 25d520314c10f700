"""Laboratory for critical branching random walk on the integer lattice.

Exact local-time moments via skeleton diagrams, Monte Carlo tail
estimation, and validation of the predicted tail laws.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConfigurationError,
    DivergenceError,
    DomainError,
    FitError,
    PrecisionLossError,
    ResourceLimitError,
)

__all__ = [
    "ConfigurationError",
    "DivergenceError",
    "DomainError",
    "FitError",
    "PrecisionLossError",
    "ResourceLimitError",
    "__version__",
]
