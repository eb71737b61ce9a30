"""Bit-packing of low-bit integer codes into byte arrays.

Layout contract (part of the on-disk format): little-endian within bytes,
i.e. the lowest element index occupies the least-significant bits of its
byte. Rows pack independently so every row stays byte-aligned; a row whose
element count does not fill its last byte is zero-padded at the high bits.
"""

from __future__ import annotations

import numpy as np

PACKABLE_BITS = (1, 2, 4, 8)


def _check_bits(bits: int) -> None:
    if bits not in PACKABLE_BITS:
        raise ValueError(f"bits must be one of {PACKABLE_BITS}, got {bits}")


def packed_row_bytes(num_elements: int, bits: int) -> int:
    """Bytes needed to pack one row of ``num_elements`` ``bits``-bit codes."""
    _check_bits(bits)
    return -(-num_elements * bits // 8)


def pack_rows(codes: np.ndarray, bits: int) -> np.ndarray:
    """Pack a 2-D array of ``bits``-bit codes into uint8, one packed row per row.

    Raises ValueError if any code falls outside [0, 2**bits).
    """
    _check_bits(bits)
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValueError(f"expected a 2-D code array, got shape {codes.shape}")
    if not np.issubdtype(codes.dtype, np.integer):
        raise ValueError(f"codes must be integers, got dtype {codes.dtype}")
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << bits)):
        raise ValueError(f"codes out of range for {bits}-bit packing")

    rows, n = codes.shape
    per_byte = 8 // bits
    padded = -(-n // per_byte) * per_byte
    buf = np.zeros((rows, padded), dtype=np.uint8)
    buf[:, :n] = codes
    shifts = (np.arange(per_byte, dtype=np.uint8) * bits).astype(np.uint8)
    lanes = buf.reshape(rows, -1, per_byte) << shifts
    return np.bitwise_or.reduce(lanes, axis=2).astype(np.uint8)


def unpack_rows(packed: np.ndarray, bits: int, num_elements: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`; returns a (rows, num_elements) uint8 array."""
    _check_bits(bits)
    packed = np.asarray(packed, dtype=np.uint8)
    if packed.ndim != 2:
        raise ValueError(f"expected a 2-D packed array, got shape {packed.shape}")
    expected = packed_row_bytes(num_elements, bits)
    if packed.shape[1] != expected:
        raise ValueError(
            f"packed row has {packed.shape[1]} bytes, expected {expected} "
            f"for {num_elements} elements at {bits} bits"
        )
    per_byte = 8 // bits
    shifts = (np.arange(per_byte, dtype=np.uint8) * bits).astype(np.uint8)
    mask = np.uint8((1 << bits) - 1)
    lanes = (packed[:, :, None] >> shifts) & mask
    return lanes.reshape(packed.shape[0], expected * per_byte)[:, :num_elements]
