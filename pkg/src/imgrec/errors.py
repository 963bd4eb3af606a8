"""Exception hierarchy shared across the engine.

The CLI maps these onto its exit codes: InputError (and subclasses) -> 2,
DivergenceError -> 3, CheckpointMismatchError -> 4, ProtocolError -> 5.
"""


class ImgrecError(Exception):
    """Base class for all engine errors."""


class InputError(ImgrecError):
    """Unreadable, empty, or malformed input data."""


class FormatError(InputError):
    """Binary file violates its format contract.

    Carries the byte offset at which the violation was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CoverageError(InputError):
    """A feature file does not cover every item in the dataset."""


class ConfigError(ImgrecError):
    """Invalid or inconsistent configuration values."""


class ShapeError(ImgrecError):
    """Runtime tensor dimension mismatch."""


class CheckpointMismatchError(ImgrecError):
    """Checkpoint contents do not match the active model configuration."""


class ProtocolError(ImgrecError):
    """An evaluation-protocol precondition cannot be satisfied."""


class DivergenceError(ImgrecError):
    """Training produced a non-finite loss."""
