"""Reader/writer/verifier for IFV1 item-feature-vector files.

Layout (little-endian):
    magic "IFV1" | u32 version=1 | u32 item_count | u32 feature_dim
    then item_count records of [u16 key_length | key bytes UTF-8 | dim x f32]

Writers emit records sorted by UTF-8 byte order of the key; readers accept
any order and reject duplicate keys. This is an independent implementation
of the engine's on-disk contract: the file format is the only thing the two
packages share.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"IFV1"
VERSION = 1
_HEADER = struct.Struct("<III")


def write_ifv1(path, keys: list[str], matrix: np.ndarray) -> None:
    """Write one float32 vector per key; matrix rows align with keys."""
    matrix = np.asarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(keys):
        raise ValueError(f"matrix shape {matrix.shape} does not match {len(keys)} keys")
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate keys")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix contains non-finite values")
    encoded = [k.encode("utf-8") for k in keys]
    for raw, key in zip(encoded, keys):
        if len(raw) > 0xFFFF:
            raise ValueError(f"key too long: {key!r:.50}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, len(keys), matrix.shape[1]))
        for idx in sorted(range(len(keys)), key=lambda j: encoded[j]):
            fh.write(struct.pack("<H", len(encoded[idx])))
            fh.write(encoded[idx])
            fh.write(matrix[idx].tobytes())


def _need(data: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(data):
        raise FormatError(
            f"truncated file: {what} needs {n} bytes but only "
            f"{len(data) - offset} remain",
            offset=offset,
        )
    return data[offset : offset + n]


def read_ifv1(path) -> tuple[list[str], np.ndarray]:
    """Read an IFV1 file, returning (keys, float32 matrix) in file order."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read feature file {path}: {exc}") from exc
    if _need(data, 0, 4, "magic") != MAGIC:
        raise FormatError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0)
    version, count, dim = _HEADER.unpack(_need(data, 4, _HEADER.size, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dim == 0:
        raise FormatError("feature_dim must be positive", offset=12)
    offset = 4 + _HEADER.size
    keys: list[str] = []
    seen: set[str] = set()
    matrix = np.empty((count, dim), dtype=np.float32)
    for rec in range(count):
        rec_off = offset
        (key_len,) = struct.unpack(
            "<H", _need(data, offset, 2, f"record {rec} key length")
        )
        offset += 2
        raw_key = _need(data, offset, key_len, f"record {rec} key")
        try:
            key = raw_key.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(
                f"record {rec} key is not valid UTF-8", offset=offset
            ) from exc
        offset += key_len
        if key in seen:
            raise FormatError(f"duplicate key {key!r} in record {rec}", offset=rec_off)
        seen.add(key)
        keys.append(key)
        raw_vec = _need(data, offset, 4 * dim, f"record {rec} vector ({key!r})")
        vec = np.frombuffer(raw_vec, dtype="<f4")
        if not np.all(np.isfinite(vec)):
            bad = int(np.flatnonzero(~np.isfinite(vec))[0])
            raise FormatError(
                f"non-finite value in record {rec} ({key!r}, element {bad})",
                offset=offset + 4 * bad,
            )
        matrix[rec] = vec
        offset += 4 * dim
    if offset != len(data):
        raise FormatError(
            f"{len(data) - offset} trailing bytes after last record", offset=offset
        )
    return keys, matrix


@dataclass
class VerifyReport:
    count: int
    dim: int
    mean: np.ndarray  # per-dimension mean over items
    std: np.ndarray  # per-dimension std over items


def verify(path) -> VerifyReport:
    """Validate structure and finiteness; summarize per-dimension statistics."""
    keys, matrix = read_ifv1(path)
    return VerifyReport(
        count=len(keys),
        dim=matrix.shape[1],
        mean=matrix.mean(axis=0) if len(keys) else np.zeros(matrix.shape[1]),
        std=matrix.std(axis=0) if len(keys) else np.zeros(matrix.shape[1]),
    )


def format_verify_report(report: VerifyReport) -> str:
    lines = [f"items: {report.count}", f"dim: {report.dim}"]
    if report.count:
        lines.append(
            "per-dimension mean: min %.6g / median %.6g / max %.6g"
            % (report.mean.min(), np.median(report.mean), report.mean.max())
        )
        lines.append(
            "per-dimension std:  min %.6g / median %.6g / max %.6g"
            % (report.std.min(), np.median(report.std), report.std.max())
        )
    lines.append("ok")
    return "\n".join(lines)
