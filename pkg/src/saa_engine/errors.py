"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class DataLoadError(PipelineError):
    """Input file missing, unreadable, or missing a required asset."""


class DataFormatError(PipelineError):
    """File parsed but violates the documented format (order, gaps, ranges)."""


class InsufficientDataError(PipelineError):
    """Series or panel shorter than the operation's minimum window."""


class ConfigError(PipelineError):
    """Configuration missing, inconsistent, or out of range."""


class DomainError(PipelineError):
    """Numerical input outside the operation's domain (non-PSD, bad bounds)."""


class InfeasibleError(PipelineError):
    """Constraint set admits no solution."""


class ConvergenceError(PipelineError):
    """Iterative solver exhausted its budget; carries the final residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class EscalationError(PipelineError):
    """No compliant ensemble survives the IPS gate; human review required."""
