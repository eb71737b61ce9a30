"""One-pass sign-based clustering of key subvectors.

Keys are split into 4-dimensional subvectors. Each subvector's sign pattern
is a 4-bit code (MSB first: element i of the subvector carries weight
2**(3 - i), set iff the element is >= 0). The code is simultaneously the
1-bit sign plane of the key and its cluster assignment; the per-group
codebook holds the mean of every cluster, computed in a single pass with
no iterative refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitpack import pack_rows, unpack_rows
from .instrument import tally
from .normalize import _as_matrix

SUBVECTOR_DIM = 4
CODEBOOK_SIZE = 16

# weight of subvector element i, MSB first
_BIT_WEIGHTS = np.array([8, 4, 2, 1], dtype=np.uint8)
_BIT_SHIFTS = np.array([3, 2, 1, 0], dtype=np.uint8)


def encode_sign_code(subvector) -> int:
    """4-bit sign code of one length-4 subvector; sign(0) counts as +1."""
    v = np.asarray(subvector, dtype=np.float64)
    if v.shape != (SUBVECTOR_DIM,):
        raise ValueError(f"subvector must have shape ({SUBVECTOR_DIM},), got {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError("subvector contains non-finite entries")
    return int(((v >= 0) * _BIT_WEIGHTS).sum())


def sign_pattern_vectors() -> np.ndarray:
    """The 16 sign patterns as rows of a (16, 4) matrix of -1/+1 floats.

    Row j is the pattern encoded by code j, so ``sign_pattern_vectors()[code]``
    reconstructs the sign plane of any subvector with that code.
    """
    codes = np.arange(CODEBOOK_SIZE, dtype=np.uint8)
    bits = (codes[:, None] >> _BIT_SHIFTS) & 1
    return bits.astype(np.float64) * 2.0 - 1.0


@dataclass(frozen=True, eq=False)
class SignCodeMatrix:
    """Packed 4-bit sign codes, one per token per group (two codes per byte).

    Doubles as the retrieval index and the 1-bit sign plane of the keys.
    The semantic bit cost is exactly ``num_tokens * num_groups * 4`` bits;
    rows with an odd group count carry 4 padding bits each.
    """

    packed: np.ndarray
    num_tokens: int
    num_groups: int

    def __post_init__(self) -> None:
        expected = (self.num_tokens, -(-self.num_groups // 2))
        if self.packed.shape != expected or self.packed.dtype != np.uint8:
            raise ValueError(
                f"packed array must be uint8 with shape {expected}, "
                f"got {self.packed.dtype} {self.packed.shape}"
            )

    @classmethod
    def from_codes(cls, codes: np.ndarray) -> "SignCodeMatrix":
        codes = np.asarray(codes)
        packed = pack_rows(codes.astype(np.uint8), bits=4)
        return cls(packed=packed, num_tokens=codes.shape[0], num_groups=codes.shape[1])

    def unpack(self, rows=None) -> np.ndarray:
        """Codes as a (rows, G) uint8 array; all rows when ``rows`` is None."""
        packed = self.packed if rows is None else self.packed[np.asarray(rows)]
        return unpack_rows(packed, bits=4, num_elements=self.num_groups)

    def sign_plane(self, rows=None) -> np.ndarray:
        """Decoded signs as a (rows, G*4) array of -1.0/+1.0."""
        codes = self.unpack(rows)
        bits = (codes[:, :, None] >> _BIT_SHIFTS) & 1
        return bits.reshape(codes.shape[0], -1).astype(np.float64) * 2.0 - 1.0

    @property
    def bit_cost(self) -> int:
        return self.num_tokens * self.num_groups * SUBVECTOR_DIM


@dataclass(frozen=True, eq=False)
class Codebook:
    """Per-group table of 16 centroids of dimension 4 (key units).

    Empty clusters hold the zero vector; non-empty centroids are componentwise
    sign-consistent with their code by construction (a mean of same-signed
    values keeps that sign, or is exactly 0 when every member is 0).
    """

    centroids: np.ndarray

    def __post_init__(self) -> None:
        shape = self.centroids.shape
        if len(shape) != 3 or shape[1] != CODEBOOK_SIZE or shape[2] != SUBVECTOR_DIM:
            raise ValueError(
                f"centroids must have shape (G, {CODEBOOK_SIZE}, {SUBVECTOR_DIM}), got {shape}"
            )

    @property
    def num_groups(self) -> int:
        return self.centroids.shape[0]


def encode_keys(keys_norm) -> SignCodeMatrix:
    """Sign-encode every 4-element subvector of a mean-normalized key matrix."""
    K = _as_matrix(keys_norm, "keys_norm")
    L, D = K.shape
    if D < SUBVECTOR_DIM or D % SUBVECTOR_DIM != 0:
        raise ValueError(f"channel count {D} must be a positive multiple of {SUBVECTOR_DIM}")
    G = D // SUBVECTOR_DIM
    sub = K.reshape(L, G, SUBVECTOR_DIM)
    codes = ((sub >= 0).astype(np.uint8) * _BIT_WEIGHTS).sum(axis=2).astype(np.uint8)
    return SignCodeMatrix.from_codes(codes)


def build_codebook(keys_norm, codes: SignCodeMatrix) -> Codebook:
    """Average the subvectors of each sign cluster in a single pass.

    Each subvector is read exactly once and scattered into a running
    (sum, count) accumulator, so prefill cost is linear with no k-means
    style iteration.
    """
    K = _as_matrix(keys_norm, "keys_norm")
    L, D = K.shape
    G = D // SUBVECTOR_DIM
    if D % SUBVECTOR_DIM != 0 or codes.num_tokens != L or codes.num_groups != G:
        raise ValueError(
            f"codes describe {codes.num_tokens}x{codes.num_groups} groups, "
            f"keys are {L}x{D}"
        )

    sub = K.reshape(L, G, SUBVECTOR_DIM)
    idx = codes.unpack()
    group_idx = np.broadcast_to(np.arange(G, dtype=np.intp), (L, G))

    sums = np.zeros((G, CODEBOOK_SIZE, SUBVECTOR_DIM), dtype=np.float64)
    counts = np.zeros((G, CODEBOOK_SIZE), dtype=np.int64)
    np.add.at(sums, (group_idx, idx), sub)
    np.add.at(counts, (group_idx, idx), 1)
    tally("codebook_subvector_reads", L * G)

    centroids = np.divide(
        sums,
        counts[:, :, None],
        out=np.zeros_like(sums),
        where=counts[:, :, None] > 0,
    )
    return Codebook(centroids=centroids)
