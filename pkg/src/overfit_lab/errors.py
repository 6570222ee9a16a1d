"""Exception hierarchy. The CLI maps these onto exit codes."""


class OverfitLabError(Exception):
    exit_code = 2


class ValidationError(OverfitLabError, ValueError):
    """Bad inputs: wrong shapes, violated preconditions, missing files."""

    exit_code = 1


class NumericalError(OverfitLabError, ArithmeticError):
    """Singular systems, non-convergence and similar numerical failures."""

    exit_code = 2


class SingularMatrixError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, partial=None, terms=None):
        super().__init__(message)
        self.partial = partial
        self.terms = terms
