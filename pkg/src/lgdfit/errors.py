"""Exception types raised across the package.

Each error carries the CLI exit code it maps to, so the command layer can
translate failures without a lookup table.
"""


class LGDError(Exception):
    exit_code = 1


class InvalidInputError(LGDError, ValueError):
    exit_code = 3


class InvalidCameraError(InvalidInputError):
    pass


class ShapeError(InvalidInputError):
    pass


class DegenerateTargetError(InvalidInputError):
    """Raised when a target has too few visible joints to be fitted."""


class DegenerateAlignmentError(InvalidInputError):
    pass


class InvalidStateError(LGDError, RuntimeError):
    exit_code = 1


class ConfigError(LGDError, ValueError):
    exit_code = 2


class DataError(LGDError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DivergenceError(LGDError, FloatingPointError):
    """Non-finite loss or state during training or fitting.

    ``step`` is the training step or fit iteration that failed; ``payload``
    holds whatever partial result the raiser could salvage (a trace, or the
    last good weights).
    """

    exit_code = 4

    def __init__(self, message, step=None, payload=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step
        self.payload = payload
