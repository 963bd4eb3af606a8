"""Little-endian binary reading with byte-offset error reporting."""

import struct

import numpy as np

from .errors import FormatError


class ByteReader:
    """Sequential reader over an in-memory buffer.

    Every read records its offset so that format violations can be reported
    with the exact position of the offending bytes.
    """

    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def remaining(self) -> int:
        return len(self.data) - self.offset

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.data):
            raise FormatError(
                f"truncated file: {what} needs {n} bytes but only "
                f"{self.remaining()} remain",
                offset=self.offset,
            )
        chunk = self.data[self.offset : self.offset + n]
        self.offset += n
        return chunk

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def f32_array(self, count: int, what: str) -> np.ndarray:
        start = self.offset
        raw = self.take(4 * count, what)
        arr = np.frombuffer(raw, dtype="<f4").copy()
        if not np.all(np.isfinite(arr)):
            bad = int(np.flatnonzero(~np.isfinite(arr))[0])
            raise FormatError(
                f"non-finite value in {what} (element {bad})",
                offset=start + 4 * bad,
            )
        return arr

    def expect_end(self, what: str) -> None:
        if self.remaining() != 0:
            raise FormatError(
                f"{self.remaining()} trailing bytes after {what}",
                offset=self.offset,
            )
