"""Exception and warning types raised across the package."""


class BBGPError(Exception):
    """Base class for all package errors."""


class NumericalError(BBGPError):
    """Failure of a numerical routine (CLI exit code 3)."""


class NotPositiveDefinite(NumericalError):
    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"matrix is not positive definite (pivot {self.pivot})")


class NoConvergence(NumericalError):
    pass


class BreakdownError(NumericalError):
    """CG encountered a non-positive curvature p^T K p."""


class SingularShift(NumericalError):
    """Gauss-Radau prescribed node coincides with a Ritz value."""


class NonPositiveRitzValue(NumericalError):
    pass


class DataError(BBGPError):
    """Problem with user-supplied data (CLI exit code 2)."""


class ParseError(DataError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        super().__init__(message)


class MissingTarget(DataError):
    pass


class ConstantColumn(DataError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"column {column!r} is constant on the training rows")


class LengthMismatch(ValueError):
    pass


class NotConvergedWarning(RuntimeWarning):
    pass
