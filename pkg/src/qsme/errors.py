"""Exception types shared across the package."""


class QsmeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(QsmeError, ValueError):
    """An operator, model, channel, or configuration violated its contract."""


class NumericalGuardError(QsmeError, RuntimeError):
    """A numerical safety guard tripped.

    Raised when a step size is too large for the configured operators
    (normalization spectrum below the eigenvalue floor, per-step jump
    probability beyond the small-dt regime) or when all outcome
    probabilities collapse below the degeneracy threshold.
    """
