"""Binary tensor container for moving K/V/query dumps in and out.

Layout, all little-endian:

    offset 0   magic   "KVT1" (4 bytes)
    offset 4   version u16    (currently 1)
    offset 6   dtype   u8     (0 = float32, 1 = float16)
    offset 7   ndims   u8
    offset 8   dims    ndims x u64
    then       payload, row-major

float32 files round-trip losslessly; float16 payloads are upcast to float32
on load. Loaders reject unknown magic/version/dtype and any payload whose
byte count disagrees with the declared dims.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"KVT1"
VERSION = 1

DTYPE_F32 = 0
DTYPE_F16 = 1
_DTYPE_CODES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F16: np.dtype("<f2")}
_NAME_TO_CODE = {"f32": DTYPE_F32, "f16": DTYPE_F16}


class TensorFormatError(ValueError):
    """Malformed tensor file; messages carry the offending byte offset."""


def save_tensor(tensor, path, dtype: str = "f32") -> None:
    """Write an array as a tensor file. ``dtype`` is "f32" or "f16"."""
    if dtype not in _NAME_TO_CODE:
        raise ValueError(f"dtype must be one of {sorted(_NAME_TO_CODE)}, got {dtype!r}")
    code = _NAME_TO_CODE[dtype]
    arr = np.ascontiguousarray(tensor, dtype=_DTYPE_CODES[code])
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def load_tensor(path) -> np.ndarray:
    """Read a tensor file back as a float32 array (f16 payloads are upcast)."""
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < 8:
        raise TensorFormatError(f"file is {len(blob)} bytes, shorter than the 8-byte fixed header")
    if blob[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {blob[:4]!r} at offset 0, expected {MAGIC!r}")
    version, code, ndims = struct.unpack_from("<HBB", blob, 4)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version} at offset 4")
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code} at offset 6")

    dims_end = 8 + 8 * ndims
    if len(blob) < dims_end:
        raise TensorFormatError(
            f"truncated dims: expected {8 * ndims} bytes at offset 8, found {len(blob) - 8}"
        )
    dims = struct.unpack_from(f"<{ndims}Q", blob, 8)

    dtype = _DTYPE_CODES[code]
    count = 1
    for d in dims:
        count *= d
    expected = count * dtype.itemsize
    actual = len(blob) - dims_end
    if actual != expected:
        raise TensorFormatError(
            f"payload at offset {dims_end} is {actual} bytes, expected {expected} "
            f"for dims {tuple(dims)}"
        )
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=dims_end).reshape(dims)
    return arr.astype(np.float32)  # always copies: the result is writable
