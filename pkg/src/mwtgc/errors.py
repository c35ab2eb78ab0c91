"""Exception types raised across the package."""


class MwtgcError(Exception):
    """Base class for all package errors."""


class InputError(MwtgcError, ValueError):
    """Malformed or inconsistent input data (topology, speeds, config)."""

    def __init__(self, message, offenders=None):
        super().__init__(message)
        self.offenders = list(offenders) if offenders is not None else []


class ShapeError(MwtgcError, ValueError):
    """Array shapes that cannot be combined."""


class DegenerateError(MwtgcError, ArithmeticError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


class NonFiniteError(MwtgcError, FloatingPointError):
    """A NaN or inf appeared where finite values are required."""


class DivergenceError(MwtgcError, RuntimeError):
    """Training produced a non-finite loss.

    ``state`` holds the training state at abort time; the model passed to
    ``train`` has already been restored to its best validation parameters.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
