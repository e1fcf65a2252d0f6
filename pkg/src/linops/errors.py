"""Exception hierarchy shared across the library."""


class LinOpsError(Exception):
    """Base class for all library errors."""


class ShapeError(LinOpsError):
    """Operand dimensions do not conform."""


class ConstructionError(LinOpsError):
    """Invalid payload or shape at operator construction time."""


class SingularOperatorError(LinOpsError):
    """An exact rule hit a structurally singular operator (e.g. zero pivot)."""


class NumericalBreakdownError(LinOpsError):
    """An iterative method produced non-finite iterates."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DomainError(LinOpsError):
    """Operation undefined for the operator's spectrum or annotations."""


class ParamLayoutError(LinOpsError):
    """Parameter vector layout does not match the target expression tree."""


class UnsupportedOperationError(LinOpsError):
    """No procedure is available for the requested operation on this operator."""


class RegistryFrozenError(LinOpsError):
    """Rule registration attempted after the registry was frozen."""


class StepSizeError(LinOpsError):
    """A stochastic iteration diverged; a smaller step size is needed."""


class MatrixMarketParseError(LinOpsError):
    """Malformed Matrix Market input."""

    def __init__(self, message, line_number):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number
