"""Exception hierarchy shared across the package."""


class DefactoError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(DefactoError):
    pass


class ShapeMismatch(DefactoError, ValueError):
    pass


class NotConverged(DefactoError):
    """EM iteration limit reached. ``trace`` holds the log-likelihood path."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


class SingularFit(DefactoError):
    pass


class RankDeficient(DefactoError):
    pass


class DrawFailed(DefactoError):
    pass


class NoRoot(DefactoError, ValueError):
    pass


class ValidationError(DefactoError, ValueError):
    pass


class ParseError(ValidationError):
    """Malformed cell in an input file."""

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.row = row
        self.column = column


class StudyFailed(DefactoError):
    pass
