class SidecarError(Exception):
    """Base for all errors this package raises deliberately."""


class InputError(SidecarError):
    """Missing or malformed user input (manifest, paths, flags)."""


class FormatError(SidecarError):
    """Structurally invalid IFV1 file; carries the offending byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
