"""Exception types shared across the package.

The CLI maps each family onto a distinct exit code (see ``cli.EXIT_CODES``).
"""


class EmoError(Exception):
    """Base class for package errors."""


class ConfigError(EmoError, ValueError):
    pass


class DataError(EmoError, ValueError):
    """Malformed or inconsistent input data (files, inputs to an op)."""


class InputError(DataError):
    pass


class DomainError(InputError):
    pass


class ShapeError(DataError):
    pass


class GeometryError(DataError):
    pass


class NumericError(EmoError, ArithmeticError):
    def __init__(self, message: str, layer: int | None = None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class ContractViolation(EmoError, RuntimeError):
    """An invariant that upstream code guarantees was broken."""


class StageError(EmoError):
    """Wraps an error raised inside a pipeline stage, keeping the stage label."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
