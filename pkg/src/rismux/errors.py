"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Inputs have the wrong shape, index or are non-finite."""


class DomainError(ValueError):
    """Inputs are well formed but outside the domain of the quantity."""


class NumericalError(ArithmeticError):
    """A numerical routine failed to converge.

    Parameters
    ----------
    message : str
        Human readable description.
    diagnostics : dict, optional
        Whatever is known about the offending input (norms, condition...).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class LineSearchError(RuntimeError):
    """No step satisfying the strong Wolfe conditions was found."""
