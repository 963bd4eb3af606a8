"""IFV1 item-feature-vector files.

Layout (little-endian):
    magic "IFV1" | u32 version=1 | u32 item_count | u32 feature_dim
    then item_count records of [u16 key_length | key bytes UTF-8 | dim x f32]

Writers emit records sorted by UTF-8 byte order of the key; readers accept
any order and reject duplicate keys.
"""

import struct
from pathlib import Path

import numpy as np

from .binio import ByteReader
from .errors import FormatError, InputError

MAGIC = b"IFV1"
VERSION = 1


def write_ifv1(path, keys: list[str], matrix: np.ndarray) -> None:
    """Write one feature vector per key; matrix rows align with keys."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise ValueError(
            f"matrix shape {matrix.shape} does not match {len(keys)} keys"
        )
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate keys")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix contains non-finite values")
    order = sorted(range(len(keys)), key=lambda idx: keys[idx].encode("utf-8"))
    dim = matrix.shape[1]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, len(keys), dim))
        for idx in order:
            encoded = keys[idx].encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ValueError(f"key too long: {keys[idx]!r:.50}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(matrix[idx].tobytes())


def read_ifv1(path) -> tuple[list[str], np.ndarray]:
    """Read an IFV1 file, returning (keys, float32 matrix) in file order."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read feature file {path}: {exc}") from exc
    reader = ByteReader(data)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
    version = reader.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    count = reader.u32("item_count")
    dim = reader.u32("feature_dim")
    if dim == 0:
        raise FormatError("feature_dim must be positive", offset=12)
    keys: list[str] = []
    seen: set[str] = set()
    matrix = np.empty((count, dim), dtype=np.float32)
    for rec in range(count):
        key_off = reader.offset
        key_len = reader.u16(f"record {rec} key length")
        raw_key = reader.take(key_len, f"record {rec} key")
        try:
            key = raw_key.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(
                f"record {rec} key is not valid UTF-8", offset=key_off + 2
            ) from exc
        if key in seen:
            raise FormatError(
                f"duplicate key {key!r} in record {rec}", offset=key_off
            )
        seen.add(key)
        keys.append(key)
        matrix[rec] = reader.f32_array(dim, f"record {rec} vector ({key!r})")
    reader.expect_end("last record")
    return keys, matrix
