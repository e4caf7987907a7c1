"""Error types raised by the stochastic splitting library.

All errors are Temporal ApplicationErrors so they cross activity and workflow
boundaries with their type name intact. Inputs are deterministic, so none of
them is retryable.
"""

from temporalio.exceptions import ApplicationError


class SplittingError(ApplicationError):
    """Base class for every error raised by this package."""

    def __init__(self, message: str, *details) -> None:
        super().__init__(message, *details, type=type(self).__name__, non_retryable=True)


class ConfigError(SplittingError):
    """Experiment configuration failed schema or semantic validation."""


class LatticeError(SplittingError):
    """Invalid Wiener lattice request (level, horizon, channels, seed)."""


class NumericsError(SplittingError):
    """Non-finite input or unsupported size for a numerical kernel."""


class CommutatorTooLarge(SplittingError):
    """A closed-form flow was requested for matrices that do not commute."""


class SchemePreconditionError(SplittingError):
    """A splitting scheme was called outside its preconditions."""


class GridError(SplittingError):
    """Spatial grid or grid state violates its invariants."""


class OverflowGuardError(SplittingError):
    """A pointwise exponential would overflow double precision."""


class EnsembleError(SplittingError):
    """Weighted ensemble or collapse configuration is unusable."""
