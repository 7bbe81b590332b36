"""Exception hierarchy shared across the package."""


class BodyIKError(Exception):
    """Base class for all package errors."""


class PreconditionError(BodyIKError, ValueError):
    """An input violated a documented precondition."""


class DegenerateRepresentationError(BodyIKError, ValueError):
    """A 6D rotation (or other encoding) could not be orthonormalised."""


class DegenerateAlignmentError(BodyIKError, ValueError):
    """Procrustes alignment on a rank-deficient point configuration."""


class ShapeMismatchError(BodyIKError, ValueError):
    """Array shapes do not agree with the model or config."""


class NumericFailureError(BodyIKError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class UndefinedScoreError(BodyIKError, ValueError):
    """A normalised score was requested with a zero denominator."""
