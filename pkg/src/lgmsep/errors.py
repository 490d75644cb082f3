"""Exception hierarchy shared by every lgmsep module."""


class LgmsepError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LgmsepError, ValueError):
    pass


class IllConditionedError(LgmsepError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular.

    ``index`` carries the offending bin, e.g. ``(f,)`` or ``(f, n)``.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class SolverDivergenceError(LgmsepError, ArithmeticError):
    def __init__(self, message, index=None, trace=None):
        super().__init__(message)
        self.index = index
        self.trace = trace


class TrainingDivergenceError(LgmsepError, ArithmeticError):
    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class InvariantViolation(LgmsepError, AssertionError):
    """A model invariant checked during a solver run does not hold."""


class FormatError(LgmsepError, ValueError):
    """Malformed WAV file or binary container."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(LgmsepError, ValueError):
    pass
