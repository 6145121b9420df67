"""Exception types raised across the package."""


class DecoupleError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(DecoupleError, ValueError):
    pass


class SingularityError(DecoupleError, ArithmeticError):
    """Raised when ``Id - v sigma_z`` is not invertible within the contraction regime."""


class NonConvergenceError(DecoupleError, RuntimeError):
    pass


class OrderExceededError(DecoupleError, ValueError):
    pass


class NonFiniteError(DecoupleError, FloatingPointError):
    pass


class UnknownProblemError(DecoupleError, KeyError):
    def __str__(self):  # KeyError would repr() the message
        return str(self.args[0]) if self.args else ""


class ConfigError(DecoupleError, ValueError):
    pass
