"""Exception types raised across the package."""


class SSVMError(Exception):
    """Base class for all package errors."""


class StructuralError(SSVMError, ValueError):
    """Shapes, lengths or index sets are inconsistent with each other."""


class DomainError(SSVMError, ValueError):
    """A scalar parameter lies outside its admissible range."""


class NumericalConsistencyError(SSVMError, ArithmeticError):
    """A quantity that must be real (or finite) came out otherwise."""


class NumericalDivergenceError(SSVMError, ArithmeticError):
    """ADMM iterates blew up.

    Attributes
    ----------
    iteration : int
        Iteration index at which the blow-up was detected.
    """

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration
