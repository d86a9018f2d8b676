"""Exception hierarchy shared by all modules."""


class TodaError(Exception):
    """Base class for every error raised by the package."""


class DomainError(TodaError, ValueError):
    """An argument lies outside the set where the operation is defined."""


class PreconditionError(TodaError, ValueError):
    """Inputs are well-formed but violate an operation's precondition."""


class ResourceError(TodaError, RuntimeError):
    """Mesh generation or another resource-bound step failed."""


class ConditioningError(TodaError, ArithmeticError):
    """A factorization was singular or numerically singular."""

    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class StagnationError(TodaError, RuntimeError):
    """Damped Newton could not reduce the residual."""


class DivergenceError(TodaError, RuntimeError):
    """An iteration left its basin (exponential overflow, contraction >= 1)."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class CascadeOverflowError(TodaError, OverflowError):
    """Log-space cascade arithmetic left the representable range."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
