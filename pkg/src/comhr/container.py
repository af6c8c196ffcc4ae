"""Binary tensor container.

Layout (all little-endian)::

    b"CMHR" | u32 version=1 | u32 ndim | u32 dims[ndim] | f32 payload[prod(dims)]

Values are stored as float32 and widened to float64 on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ContainerError,
    DimOverflowError,
    MissingFileError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"CMHR"
VERSION = 1
MAX_NDIM = 16
MAX_ELEMENTS = 2**31 - 1


def encode(array):
    arr = np.asarray(array, dtype=np.float64)
    dims = arr.shape if arr.ndim else (1,)
    if len(dims) > MAX_NDIM or any(d <= 0 for d in dims):
        raise DimOverflowError(f"cannot store dims {list(dims)}")
    header = MAGIC + struct.pack("<II", VERSION, len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return header + arr.astype("<f4").tobytes()


def decode(buf, source="<bytes>"):
    if len(buf) < 12:
        if buf[:4] != MAGIC[: len(buf[:4])]:
            raise BadMagicError(f"{source}: bad magic {bytes(buf[:4])!r}")
        raise TruncatedPayloadError(f"{source}: header truncated ({len(buf)} bytes)")
    if buf[:4] != MAGIC:
        raise BadMagicError(f"{source}: bad magic {bytes(buf[:4])!r}")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise VersionMismatchError(f"{source}: version {version}, expected {VERSION}")
    if ndim == 0 or ndim > MAX_NDIM:
        raise DimOverflowError(f"{source}: ndim {ndim} out of range")
    end = 12 + 4 * ndim
    if len(buf) < end:
        raise TruncatedPayloadError(f"{source}: dims truncated")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    count = 1
    for d in dims:
        if d == 0:
            raise ContainerError(f"{source}: zero-length dim in {list(dims)}")
        count *= d
        if count > MAX_ELEMENTS:
            raise DimOverflowError(f"{source}: dims {list(dims)} exceed {MAX_ELEMENTS} elements")
    need = end + 4 * count
    if len(buf) < need:
        raise TruncatedPayloadError(f"{source}: payload has {len(buf) - end} bytes, need {4 * count}")
    if len(buf) > need:
        raise ContainerError(f"{source}: {len(buf) - need} trailing bytes")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=end)
    return data.astype(np.float64).reshape(dims)


def save_tensor(path, array):
    Path(path).write_bytes(encode(array))


def load_tensor(path):
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(path)
    return decode(path.read_bytes(), source=str(path))


def f32(array):
    """Round to the nearest float32 value, kept as float64."""
    return np.asarray(array, dtype=np.float64).astype(np.float32).astype(np.float64)
