"""Binary tensor file format and content hashing.

The on-disk format is deliberately trivial: an 8-byte magic string,
a shape header, then raw little-endian float32 data in C order.  It is
used for the dataset cache, pattern dumps and flashcard sets.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"FLSHTNSR"


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    """Write a float32 tensor to ``path`` in the package binary format."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, not a tensor file")
        (ndim,) = struct.unpack("<I", fh.read(4))
        if ndim > 8:
            raise DataError(f"{path}: implausible rank {ndim}")
        shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim))
        data = fh.read()
    expected = int(np.prod(shape)) * 4
    if len(data) != expected:
        raise DataError(
            f"{path}: payload is {len(data)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_array(array: np.ndarray) -> str:
    return sha256_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())
