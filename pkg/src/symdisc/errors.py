"""Exception and warning types raised across the package."""


class SymdiscError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(SymdiscError, ValueError):
    pass


class FormatError(SymdiscError, ValueError):
    """Malformed input file. ``offset`` is the byte offset where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InsufficientDataError(SymdiscError, ValueError):
    pass


class InsufficientClassDataError(InsufficientDataError):
    pass


class DegenerateCovarianceError(SymdiscError, ValueError):
    pass


class DistinctEigenvalueError(SymdiscError, ValueError):
    """Two eigenvalues coincide where the method needs a strict ordering."""


class PreconditionViolatedError(SymdiscError, ValueError):
    pass


class NoScorableCoordinatesError(SymdiscError, ValueError):
    pass


class EmptyRestrictionError(SymdiscError, ValueError):
    def __init__(self, n_fixed):
        super().__init__(f"half-space restriction over {n_fixed} fixed vectors is empty")
        self.n_fixed = n_fixed


class InconsistentGroupError(SymdiscError, RuntimeError):
    pass


class UndefinedAccuracyError(SymdiscError, ValueError):
    pass


class NumericInstabilityError(SymdiscError, RuntimeError):
    """Optimisation kept producing non-finite values. Carries the last stable trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class DistinctEigenvalueWarning(UserWarning):
    """Sample eigengap is small relative to the spectrum; eigenvectors may be unstable."""
