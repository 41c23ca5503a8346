"""Checkpoint file format.

``b"GQCK"``, u32 version, u32 header length, header (UTF-8 key=value
lines), then one section per tensor: u16 name length, name, u8 rank,
u32 dims, little-endian float32 values. A trailing u32 holds the section
count.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagicError, FormatError, MissingFileError, TruncatedError, VersionMismatchError

MAGIC = b"GQCK"
VERSION = 1


@dataclass
class Checkpoint:
    config: dict[str, str]
    params: dict[str, np.ndarray]
    final_epoch: int = 0
    seed: int = 0
    meta: dict[str, str] = field(default_factory=dict)
    version: int = VERSION

    def header_text(self) -> str:
        lines = [f"{k}={v}" for k, v in self.config.items()]
        lines.append(f"final_epoch={self.final_epoch}")
        lines.append(f"checkpoint_seed={self.seed}")
        lines.extend(f"meta.{k}={v}" for k, v in self.meta.items())
        for line in lines:
            if "\n" in line:
                raise FormatError(f"header entry contains a newline: {line!r}")
        return "\n".join(lines) + "\n"


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    header = ckpt.header_text().encode("utf-8")
    out = bytearray(MAGIC + struct.pack("<II", ckpt.version, len(header)) + header)
    names = sorted(ckpt.params)
    for name in names:
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", len(names))
    path = Path(path)
    path.write_bytes(bytes(out))
    return path


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedError(f"{self.path}: truncated while reading {what}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"missing checkpoint: {path}")
    r = _Reader(path.read_bytes(), path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: checkpoint version {version}, expected {VERSION}")
    (hlen,) = r.unpack("<I", "header length")
    header = r.take(hlen, "header").decode("utf-8")

    config, meta = {}, {}
    final_epoch = seed = 0
    for line in header.split("\n"):
        if not line:
            continue
        key, _, value = line.partition("=")
        if key == "final_epoch":
            final_epoch = int(value)
        elif key == "checkpoint_seed":
            seed = int(value)
        elif key.startswith("meta."):
            meta[key[5:]] = value
        else:
            config[key] = value

    params = {}
    while len(r.buf) - r.pos > 4:
        (nlen,) = r.unpack("<H", "section name length")
        name = r.take(nlen, "section name").decode("utf-8")
        (rank,) = r.unpack("<B", f"rank of {name}")
        dims = r.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        data = r.take(4 * count, f"values of {name}")
        params[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if len(r.buf) - r.pos != 4:
        raise TruncatedError(f"{path}: missing trailing section count")
    (n_sections,) = r.unpack("<I", "section count")
    if n_sections != len(params):
        raise TruncatedError(f"{path}: section count {n_sections} but {len(params)} sections read")
    return Checkpoint(config, params, final_epoch, seed, meta, version)
