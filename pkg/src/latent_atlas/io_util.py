"""Small binary containers shared across modules.

Two formats live here:

* matrix container (.latmat): magic, row/column counts, raw little-endian
  float64 data.  Used for keyword embedding matrices and as the vector block
  inside dataset and model files.
* length-prefixed blocks: helpers for composing multi-section files.

All multi-byte integers are little-endian.  Writes are atomic (temp file in
the target directory, then os.replace) so concurrent readers never observe a
torn file.
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import CorruptFileError, IoError

MATRIX_MAGIC = b"LATMX001"


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write data to path via a temp file and atomic rename."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_bytes(path: str | Path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def matrix_to_bytes(matrix: np.ndarray) -> bytes:
    m = np.ascontiguousarray(matrix, dtype="<f8")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    header = MATRIX_MAGIC + struct.pack("<II", m.shape[0], m.shape[1])
    return header + m.tobytes()


def matrix_from_bytes(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < len(MATRIX_MAGIC) + 8:
        raise CorruptFileError(f"{source}: truncated matrix container")
    if data[: len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise CorruptFileError(f"{source}: bad matrix signature")
    rows, cols = struct.unpack_from("<II", data, len(MATRIX_MAGIC))
    start = len(MATRIX_MAGIC) + 8
    expected = rows * cols * 8
    if len(data) - start != expected:
        raise CorruptFileError(
            f"{source}: matrix payload is {len(data) - start} bytes, expected {expected}"
        )
    flat = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=start)
    out = flat.reshape(rows, cols).copy()
    out.setflags(write=False)
    return out


def write_matrix(matrix: np.ndarray, path: str | Path) -> None:
    atomic_write_bytes(path, matrix_to_bytes(matrix))


def read_matrix(path: str | Path) -> np.ndarray:
    return matrix_from_bytes(read_bytes(path), source=str(path))


def pack_block(data: bytes) -> bytes:
    """Length-prefix a section of a multi-block file."""
    return struct.pack("<Q", len(data)) + data


class BlockReader:
    """Sequential reader over length-prefixed blocks."""

    def __init__(self, data: bytes, offset: int, source: str = "<bytes>"):
        self.data = data
        self.offset = offset
        self.source = source

    def next_block(self) -> bytes:
        if self.offset + 8 > len(self.data):
            raise CorruptFileError(f"{self.source}: truncated block header")
        (length,) = struct.unpack_from("<Q", self.data, self.offset)
        start = self.offset + 8
        if start + length > len(self.data):
            raise CorruptFileError(f"{self.source}: truncated block payload")
        self.offset = start + length
        return self.data[start : start + length]

    def expect_end(self) -> None:
        if self.offset != len(self.data):
            raise CorruptFileError(f"{self.source}: {len(self.data) - self.offset} trailing bytes")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
