class SkbmError(Exception):
    """Base class for errors raised by the package."""


class DomainError(SkbmError, ValueError):
    pass


class NumericalError(SkbmError, ArithmeticError):
    """A quadrature, inversion or iteration did not reach its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConditionError(SkbmError):
    """An analytic precondition (convergence, admissibility) is violated."""
