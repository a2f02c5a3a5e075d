"""Exception hierarchy shared by every ivkit module."""


class IVKitError(Exception):
    """Base class for all toolkit errors."""


class DataError(IVKitError, ValueError):
    """Bad input data: missing files or columns, empty results, bad domains."""


class DomainViolation(DataError):
    """A column holds values outside its declared domain."""


class SpecError(IVKitError, ValueError):
    """An inconsistent model or pipeline definition."""


class NumericalError(IVKitError, ArithmeticError):
    """A numerical routine could not produce a valid answer."""


class RankError(NumericalError):
    """Design matrix is rank deficient.

    ``columns`` names the columns found to be linearly dependent on the rest.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class SeparationError(NumericalError):
    """Binary-response MLE diverges (perfect or quasi-perfect separation)."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""
