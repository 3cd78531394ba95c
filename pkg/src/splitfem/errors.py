"""Exception hierarchy shared by all modules."""


class SplitFemError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SplitFemError, ValueError):
    pass


class NumericInputError(SplitFemError, ValueError):
    """A user-supplied function returned NaN or Inf."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class CoefficientSignError(SplitFemError, ValueError):
    pass


class NonConvergenceError(SplitFemError, RuntimeError):
    """An iterative solver ran out of iterations."""

    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class MatrixPropertyError(SplitFemError, RuntimeError):
    pass


class FactorizationError(SplitFemError, RuntimeError):
    pass


class StaleHandleError(SplitFemError, RuntimeError):
    pass


class ConfigError(SplitFemError, ValueError):
    pass
