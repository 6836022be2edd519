"""T4D raw tensor files.

Layout (all little-endian)::

    bytes 0..7    magic  b"T4D\\x00\\x00\\x00\\x00\\x00"
    bytes 8..11   uint32 format version
    bytes 12..15  uint32 reserved (0)
    4 x uint64    dims (n, h, w, c)
    float64       row-major payload, n*h*w*c values

Lower-rank arrays are stored with leading unit dims.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"T4D\x00\x00\x00\x00\x00"
VERSION = 1
_HEADER = struct.Struct("<8sII4Q")


class T4DFormatError(ValueError):
    pass


def as_4d(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim > 4:
        raise T4DFormatError(f"rank {a.ndim} does not fit in a T4D file")
    return a.reshape((1,) * (4 - a.ndim) + a.shape)


def to_bytes(a: np.ndarray) -> bytes:
    a4 = as_4d(a)
    head = _HEADER.pack(MAGIC, VERSION, 0, *a4.shape)
    return head + np.ascontiguousarray(a4, dtype="<f8").tobytes()


def read_stream(f: BinaryIO) -> np.ndarray:
    raw = f.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise T4DFormatError("truncated T4D header")
    magic, version, _reserved, *dims = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise T4DFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise T4DFormatError(f"unsupported T4D version {version}")
    count = int(np.prod(dims))
    payload = f.read(8 * count)
    if len(payload) != 8 * count:
        raise T4DFormatError("truncated T4D payload")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)


def save(path: str | Path, a: np.ndarray) -> None:
    Path(path).write_bytes(to_bytes(a))


def load(path: str | Path) -> np.ndarray:
    with open(path, "rb") as f:
        return read_stream(f)


def nbytes(a: np.ndarray) -> int:
    return _HEADER.size + 8 * int(np.asarray(a).size)
