"""Compressed-domain scoring and top-k token selection.

A query is scored against the whole cache without touching a single key:
the 16 query-centroid dot products per group go into a lookup table, and a
token's score is the sum of the table entries its stored codes select. The
scoring loop is gather-and-add only; every multiplication happens during
table construction, whose cost is independent of the cache length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import CODEBOOK_SIZE, SUBVECTOR_DIM, Codebook, SignCodeMatrix, sign_pattern_vectors
from .instrument import tally


def _as_query(q, dim: int | None = None) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError(f"query must be 1-D, got shape {q.shape}")
    if dim is not None and q.shape[0] != dim:
        raise ValueError(f"query has {q.shape[0]} channels, expected {dim}")
    if not np.isfinite(q).all():
        raise ValueError("query contains non-finite entries")
    return q


@dataclass(frozen=True, eq=False)
class LookupTable:
    """Per-group scores of one query against all 16 centroids (G x 16)."""

    table: np.ndarray

    def __post_init__(self) -> None:
        if self.table.ndim != 2 or self.table.shape[1] != CODEBOOK_SIZE:
            raise ValueError(f"table must have shape (G, {CODEBOOK_SIZE}), got {self.table.shape}")

    @property
    def num_groups(self) -> int:
        return self.table.shape[0]


def build_lut(q, codebook: Codebook) -> LookupTable:
    """Dot the query's 4-element subvectors against every centroid of their group."""
    G = codebook.num_groups
    q = _as_query(q, dim=G * SUBVECTOR_DIM)
    table = np.einsum("gd,gcd->gc", q.reshape(G, SUBVECTOR_DIM), codebook.centroids)
    return LookupTable(table=table)


def build_sign_lut(q, num_groups: int) -> LookupTable:
    """Lookup table against the raw -1/+1 sign patterns instead of centroids.

    This drops the magnitude information the codebook carries; it exists as
    the degraded sign-only scoring variant for ablation runs.
    """
    q = _as_query(q, dim=num_groups * SUBVECTOR_DIM)
    table = q.reshape(num_groups, SUBVECTOR_DIM) @ sign_pattern_vectors().T
    return LookupTable(table=table)


def score_tokens(lut: LookupTable, codes: SignCodeMatrix) -> np.ndarray:
    """Approximate q . K'^T for every token by G table reads and G-1 adds."""
    if codes.num_groups != lut.num_groups:
        raise ValueError(
            f"codes have {codes.num_groups} groups, lookup table has {lut.num_groups}"
        )
    idx = codes.unpack()
    L, G = idx.shape
    picked = lut.table[np.arange(G)[None, :], idx]
    tally("lut_lookups", L * G)
    tally("lut_adds", L * (G - 1) if G else 0)
    tally("score_muls", 0)
    return picked.sum(axis=1)


def dense_scores(q, keys_norm) -> np.ndarray:
    """Exact q . K'^T, the full-precision reference the LUT path approximates."""
    K = np.asarray(keys_norm, dtype=np.float64)
    if K.ndim != 2:
        raise ValueError(f"keys_norm must be 2-D, got shape {K.shape}")
    q = _as_query(q, dim=K.shape[1])
    L, D = K.shape
    tally("dense_muls", L * D)
    tally("dense_adds", L * (D - 1) if D else 0)
    return K @ q


@dataclass(frozen=True, eq=False)
class TokenSelection:
    """Sorted token indices chosen for sparse attention, with membership counts.

    Sink and recent tokens are always present; dynamic members are exactly
    the k highest-scoring remaining tokens (ties resolved toward the lower
    index).
    """

    indices: np.ndarray
    sink_count: int
    recent_count: int
    dynamic_count: int

    def __post_init__(self) -> None:
        if self.indices.ndim != 1:
            raise ValueError("indices must be 1-D")
        if self.sink_count + self.recent_count + self.dynamic_count != self.indices.shape[0]:
            raise ValueError("breakdown counts do not sum to the selection size")

    def __len__(self) -> int:
        return int(self.indices.shape[0])


def _as_index_set(indices, length: int, name: str) -> np.ndarray:
    if isinstance(indices, np.ndarray):
        arr = indices.astype(np.int64, copy=False)
    else:
        arr = np.array(sorted(indices), dtype=np.int64)
    idx = np.unique(arr)
    if idx.size and (idx.min() < 0 or idx.max() >= length):
        raise ValueError(f"{name} indices out of range [0, {length})")
    return idx


def top_k_select(scores, k: int, sink=(), recent=()) -> TokenSelection:
    """Union of forced sink/recent indices and the top-k remaining tokens by score.

    ``k`` counts only dynamic members; it is clamped when fewer candidates
    remain. Forced tokens are never scored.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1:
        raise ValueError(f"scores must be 1-D, got shape {s.shape}")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    L = s.shape[0]
    sink_idx = _as_index_set(sink, L, "sink")
    recent_idx = _as_index_set(recent, L, "recent")
    forced = np.union1d(sink_idx, recent_idx)

    candidate_mask = np.ones(L, dtype=bool)
    candidate_mask[forced] = False
    candidates = np.flatnonzero(candidate_mask)
    k_eff = min(k, candidates.size)
    if k_eff > 0:
        # stable sort on negated scores: descending score, lower index on ties
        order = np.argsort(-s[candidates], kind="stable")[:k_eff]
        dynamic = candidates[order]
    else:
        dynamic = np.empty(0, dtype=np.int64)

    indices = np.sort(np.concatenate([forced, dynamic]))
    recent_only = np.setdiff1d(recent_idx, sink_idx).size
    return TokenSelection(
        indices=indices,
        sink_count=int(sink_idx.size),
        recent_count=int(recent_only),
        dynamic_count=int(k_eff),
    )


def resolve_dynamic_k(length: int, forced_count: int, budget: int | None = None,
                      sparsity: float | None = None) -> int:
    """Reduce a total token budget or a kept fraction to the dynamic top-k count.

    Exactly one of ``budget`` (total tokens, forced included) and ``sparsity``
    (fraction of ``length``) must be given. The fractional form rounds to
    nearest and keeps at least one dynamic token.
    """
    if (budget is None) == (sparsity is None):
        raise ValueError("exactly one of budget and sparsity must be set")
    if budget is not None:
        if budget < 0:
            raise ValueError(f"budget must be non-negative, got {budget}")
        return max(int(budget) - forced_count, 0)
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    target = int(np.floor(sparsity * length + 0.5))
    return max(target - forced_count, 1)
