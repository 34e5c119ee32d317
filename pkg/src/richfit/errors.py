"""Exception hierarchy. The CLI maps these onto exit codes."""


class RichfitError(Exception):
    exit_code = 1


class ValidationError(RichfitError, ValueError):
    """Bad input: parameters, data files or configuration."""

    exit_code = 2


class DomainError(ValidationError):
    """Argument outside the domain where a formula is defined."""


class NumericalError(RichfitError, ArithmeticError):
    """A numerical routine failed to reach its tolerance."""

    exit_code = 3


class QuadratureError(NumericalError):
    def __init__(self, message, estimate=None, abserr=None):
        super().__init__(message)
        self.estimate = estimate
        self.abserr = abserr
