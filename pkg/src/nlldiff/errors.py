"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific class that applies.
"""


class ConfigError(ValueError):
    """A configuration file or parameter set is invalid."""


class PreconditionError(ValueError):
    """An operation was called with inputs that violate its contract."""


class ArtifactMismatchError(PreconditionError):
    """Artifacts produced under different configurations were mixed."""


class ConvergenceError(RuntimeError):
    """An iterative solve stopped without reaching its tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual
