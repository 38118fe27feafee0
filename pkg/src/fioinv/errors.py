"""Exception hierarchy shared across the package."""


class FioInvError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FioInvError, ValueError):
    """Raised when arguments violate an operation's preconditions."""


class NotPositiveDefiniteError(FioInvError, ArithmeticError):
    """Raised when a Cholesky pivot is not positive.

    ``pivot`` is the zero-based index of the failing pivot within the
    factored block; ``level`` and ``node`` locate the block in a
    hierarchical factorization when known.
    """

    def __init__(self, message, pivot=None, level=None, node=None):
        super().__init__(message)
        self.pivot = pivot
        self.level = level
        self.node = node


class StageError(FioInvError):
    """Wraps a failure in one stage of the inverse-factorization pipeline."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
