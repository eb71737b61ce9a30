"""Token-wise, group-wise B-bit asymmetric quantization of values and key magnitudes.

Every token row is quantized independently in groups of ``group_size``
contiguous elements, each group carrying its own 16-bit scale and zero-point.
That makes single-token random access cheap, which is what sparse attention
needs: reconstructing one selected token never touches the rest of the cache.

Keys are handled sign/magnitude style: the sign plane already lives in the
sign-code index, so only |K'| / alpha (per-channel normalized magnitudes in
[0, 1]) is quantized, and decoding recomposes sign * alpha * dequantized
magnitude.

Codes are computed against the float16-narrowed scale and zero-point, i.e.
against the exact grid that dequantization will use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitpack import PACKABLE_BITS, pack_rows, packed_row_bytes, unpack_rows
from .codebook import SignCodeMatrix
from .instrument import tally
from .normalize import _as_matrix

PARAM_DTYPE = np.float16
PARAM_BITS = 16

# smallest positive float16; scales that underflow to 0 are clamped here so a
# non-degenerate group never stores a zero scale
_TINY_SCALE = np.float16(2.0 ** -24)


@dataclass(frozen=True)
class QuantConfig:
    bits: int = 2
    group_size: int = 32

    def __post_init__(self) -> None:
        if self.bits not in PACKABLE_BITS:
            raise ValueError(f"bits must be one of {PACKABLE_BITS}, got {self.bits}")
        if self.group_size < 1:
            raise ValueError(f"group_size must be positive, got {self.group_size}")

    @property
    def levels(self) -> int:
        return (1 << self.bits) - 1


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    """Bit-packed B-bit codes plus per-token per-group float16 scale/zero-point.

    ``packed`` holds one byte-aligned row per token (see bitpack for the
    layout contract). A degenerate group (max == min at quantization time)
    stores scale 0 and all-zero codes and reconstructs to its zero-point.
    """

    packed: np.ndarray
    scales: np.ndarray
    zeros: np.ndarray
    bits: int
    group_size: int
    num_tokens: int
    num_channels: int

    def __post_init__(self) -> None:
        L, D = self.num_tokens, self.num_channels
        n_groups = D // self.group_size
        if self.packed.shape != (L, packed_row_bytes(D, self.bits)):
            raise ValueError(f"packed has shape {self.packed.shape}, inconsistent with {L}x{D}")
        if self.scales.shape != (L, n_groups) or self.zeros.shape != (L, n_groups):
            raise ValueError("scales/zeros must have shape (num_tokens, num_groups)")
        if self.scales.dtype != PARAM_DTYPE or self.zeros.dtype != PARAM_DTYPE:
            raise ValueError(f"scales/zeros must be {PARAM_DTYPE}")

    @property
    def num_groups(self) -> int:
        return self.num_channels // self.group_size

    def codes(self, rows=None) -> np.ndarray:
        """Unpacked codes as (rows, D) uint8; all rows when ``rows`` is None."""
        packed = self.packed if rows is None else self.packed[np.asarray(rows)]
        return unpack_rows(packed, bits=self.bits, num_elements=self.num_channels)

    @property
    def code_bits(self) -> int:
        return self.bits * self.num_tokens * self.num_channels

    @property
    def param_bits(self) -> int:
        return 2 * PARAM_BITS * self.num_tokens * self.num_groups


def _narrow_params(scales: np.ndarray, zeros: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s16 = scales.astype(PARAM_DTYPE)
    z16 = zeros.astype(PARAM_DTYPE)
    if not np.isfinite(s16).all() or not np.isfinite(z16).all():
        raise ValueError("group min/max exceed the 16-bit parameter range")
    s16 = np.where((scales > 0) & (s16 == 0), _TINY_SCALE, s16)
    return s16, z16


def quantize_values(values, config: QuantConfig) -> QuantizedTensor:
    """Quantize a value matrix to B-bit codes, one scale/zero-point per group.

    Per token and per group of ``config.group_size`` contiguous elements:
    scale = (max - min) / (2**B - 1), zero-point = min, code = the nearest
    grid point (rounding half away from zero, clamped to [0, 2**B - 1]).
    """
    V = _as_matrix(values, "values")
    L, D = V.shape
    if D % config.group_size != 0:
        raise ValueError(f"channel count {D} not divisible by group_size {config.group_size}")
    n_groups = D // config.group_size

    grouped = V.reshape(L, n_groups, config.group_size)
    vmin = grouped.min(axis=2)
    vmax = grouped.max(axis=2)
    scales16, zeros16 = _narrow_params((vmax - vmin) / config.levels, vmin)

    qs = scales16.astype(np.float64)[:, :, None]
    zp = zeros16.astype(np.float64)[:, :, None]
    live = qs > 0
    ratio = np.divide(grouped - zp, qs, out=np.zeros_like(grouped), where=live)
    # floor(x + 0.5) == round-half-away-from-zero on the clamped domain
    codes = np.clip(np.floor(ratio + 0.5), 0, config.levels)
    codes = np.where(live, codes, 0.0).astype(np.uint8)

    return QuantizedTensor(
        packed=pack_rows(codes.reshape(L, D), config.bits),
        scales=scales16,
        zeros=zeros16,
        bits=config.bits,
        group_size=config.group_size,
        num_tokens=L,
        num_channels=D,
    )


def dequantize_values(q: QuantizedTensor, rows=None) -> np.ndarray:
    """Reconstruct scale * code + zero-point for every element of the given rows."""
    codes = q.codes(rows).astype(np.float64)
    n = codes.shape[0]
    scales = (q.scales if rows is None else q.scales[np.asarray(rows)]).astype(np.float64)
    zeros = (q.zeros if rows is None else q.zeros[np.asarray(rows)]).astype(np.float64)
    tally("dequant_rows", n)
    grouped = codes.reshape(n, q.num_groups, q.group_size)
    out = grouped * scales[:, :, None] + zeros[:, :, None]
    return out.reshape(n, q.num_channels)


def quantize_key_magnitudes(keys_norm, alpha, config: QuantConfig) -> QuantizedTensor:
    """Quantize |K'| / alpha, the per-channel normalized key magnitude plane.

    ``alpha`` must dominate |K'| columnwise (it comes from channel stats of
    the same matrix), so every entry fed to the quantizer lies in [0, 1].
    Channels with alpha == 0 are identically zero and map to 0.
    """
    K = _as_matrix(keys_norm, "keys_norm")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (K.shape[1],):
        raise ValueError(f"alpha must have shape ({K.shape[1]},), got {alpha.shape}")
    mags = np.abs(K) / np.where(alpha == 0, 1.0, alpha)
    mags[:, alpha == 0] = 0.0
    if mags.max(initial=0.0) > 1.0 + 1e-9:
        raise ValueError("alpha does not dominate |keys_norm|; stats were computed elsewhere")
    return quantize_values(mags, config)


def dequantize_keys(q: QuantizedTensor, alpha, signs: SignCodeMatrix, rows=None) -> np.ndarray:
    """Recompose K' rows as sign * alpha * dequantized magnitude."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (q.num_channels,):
        raise ValueError(f"alpha must have shape ({q.num_channels},), got {alpha.shape}")
    if signs.num_tokens != q.num_tokens or signs.num_groups * 4 != q.num_channels:
        raise ValueError(
            f"sign codes describe {signs.num_tokens}x{signs.num_groups * 4}, "
            f"quantized tensor is {q.num_tokens}x{q.num_channels}"
        )
    mags = dequantize_values(q, rows)
    return signs.sign_plane(rows) * alpha[None, :] * mags
