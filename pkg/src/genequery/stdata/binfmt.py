"""Framed little-endian binary matrices.

Matrix files (``expression.f32``, ``features.f32``, ``latents.f32``):
``b"GQEX"``, u32 version, u32 rows, u32 cols, rows*cols float32.
Patch files (``patches.u8``): ``b"GQPX"``, u32 version, u32 count, u32 h,
u32 w, u32 channels, raw bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import BadMagicError, MissingFileError, TruncatedError, VersionMismatchError

MATRIX_MAGIC = b"GQEX"
PATCH_MAGIC = b"GQPX"
VERSION = 1


def _read(path: Path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"missing file: {path}")
    return path.read_bytes()


def _check_header(buf: bytes, magic: bytes, n_fields: int, path) -> tuple[int, ...]:
    size = 4 + 4 * n_fields
    if len(buf) < size:
        raise TruncatedError(f"{path}: header truncated ({len(buf)} bytes)")
    if buf[:4] != magic:
        raise BadMagicError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    fields = struct.unpack(f"<{n_fields}I", buf[4:size])
    if fields[0] != VERSION:
        raise VersionMismatchError(f"{path}: version {fields[0]}, expected {VERSION}")
    return fields


def write_matrix(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("matrix must be 2-D")
    rows, cols = values.shape
    body = np.ascontiguousarray(values, dtype="<f4").tobytes()
    Path(path).write_bytes(MATRIX_MAGIC + struct.pack("<3I", VERSION, rows, cols) + body)


def read_matrix(path) -> np.ndarray:
    buf = _read(path)
    _, rows, cols = _check_header(buf, MATRIX_MAGIC, 3, path)
    need = 16 + 4 * rows * cols
    if len(buf) != need:
        raise TruncatedError(f"{path}: expected {need} bytes for {rows}x{cols}, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=16).reshape(rows, cols).astype(np.float32)


def write_patches(path, patches: np.ndarray) -> None:
    patches = np.asarray(patches, dtype=np.uint8)
    count, h, w, c = patches.shape
    header = PATCH_MAGIC + struct.pack("<5I", VERSION, count, h, w, c)
    Path(path).write_bytes(header + np.ascontiguousarray(patches).tobytes())


def read_patches(path) -> np.ndarray:
    buf = _read(path)
    _, count, h, w, c = _check_header(buf, PATCH_MAGIC, 5, path)
    need = 24 + count * h * w * c
    if len(buf) != need:
        raise TruncatedError(f"{path}: expected {need} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype=np.uint8, offset=24).reshape(count, h, w, c).copy()
