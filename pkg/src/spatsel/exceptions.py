"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when input data, schemas, or configuration are malformed."""


class EstimationError(RuntimeError):
    """Raised when an estimation step cannot produce a usable fit."""


class SeparationError(EstimationError):
    """Raised when the selection indicator is perfectly predicted."""
