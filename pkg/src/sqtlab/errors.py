"""Exception types raised across the package."""


class SqtLabError(Exception):
    """Base class for all package errors."""


class ShapeError(SqtLabError, ValueError):
    pass


class InvalidArchitectureError(SqtLabError, ValueError):
    pass


class ConfigError(SqtLabError, ValueError):
    pass


class PoisonedUpdateError(SqtLabError, FloatingPointError):
    """A gradient, loss or target went non-finite.

    ``step`` is filled in by the training loop when known.
    """

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class PoisonedTargetError(PoisonedUpdateError):
    pass


class EmptyBufferError(SqtLabError, LookupError):
    pass


class EmptyBatchError(SqtLabError, ValueError):
    pass


class InvalidActionError(SqtLabError, ValueError):
    pass


class InvalidStateError(SqtLabError, ValueError):
    pass


class DivergenceError(SqtLabError, RuntimeError):
    pass


class FormatError(SqtLabError, ValueError):
    pass
