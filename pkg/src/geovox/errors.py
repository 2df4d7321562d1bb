"""Exception types shared across the package."""


class GeovoxError(Exception):
    """Base class for all package errors."""


class InvalidInput(GeovoxError, ValueError):
    pass


class FormatError(GeovoxError, ValueError):
    pass


class DegenerateShape(GeovoxError):
    pass


class OutOfDomain(GeovoxError, ValueError):
    pass


class GridTooSmall(GeovoxError):
    pass


class NumericalBlowup(GeovoxError, ArithmeticError):
    pass


class NonPositiveG(GeovoxError, ArithmeticError):
    pass


class NotConverged(GeovoxError):
    """Iterative solver stopped at its iteration cap.

    ``result`` carries the last iterate (or best state) so callers can inspect
    or dump it; ``report`` holds the convergence diagnostics.
    """

    def __init__(self, message, result=None, report=None):
        super().__init__(message)
        self.result = result
        self.report = report
