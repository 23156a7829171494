"""SLT1 binary tensor files.

Layout (little-endian)::

    b"SLT1" | u8 dtype (0=f32, 1=f64) | u8 rank | rank x u32 extents | payload

The payload is the row-major buffer.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .autodiff import Tensor
from .errors import MagicError, TruncatedFileError, WeightFileError

MAGIC = b"SLT1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_tensor(t) -> bytes:
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if arr.dtype not in _CODES:
        raise WeightFileError(f"unsupported dtype {arr.dtype}")
    head = MAGIC + struct.pack("<BB", _CODES[arr.dtype], arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes()


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"expected {n} bytes, got {len(buf)}")
    return buf


def read_tensor_from(fh) -> Tensor:
    magic = _read_exact(fh, 4)
    if magic != MAGIC:
        raise MagicError(f"bad tensor magic {magic!r}")
    code, rank = struct.unpack("<BB", _read_exact(fh, 2))
    if code not in _DTYPES:
        raise WeightFileError(f"unknown dtype code {code}")
    shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(fh, count * dtype.itemsize), dtype=dtype)
    return Tensor(data.reshape(shape).astype(dtype.newbyteorder("="), copy=True))


def decode_tensor(buf: bytes) -> Tensor:
    return read_tensor_from(io.BytesIO(buf))


def write_tensor(path, t) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def read_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        return read_tensor_from(fh)
