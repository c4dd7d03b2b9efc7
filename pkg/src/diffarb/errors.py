"""Exception types shared across the package."""

import numpy as np


class BoundsError(ValueError):
    """Incentive parameter outside its box."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class StateSpaceError(ValueError):
    """A tabular build would exceed the configured state cap."""


class EnumerationCapError(ValueError):
    """Exact trajectory enumeration would exceed the configured cap."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of iterations.

    The partial result travels with the exception so the caller can decide
    whether to use it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularSystemError(np.linalg.LinAlgError):
    """The NE sensitivity system stayed singular after ridge regularization."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition
