"""Deterministic synthetic K/V/query workloads for the benchmarks.

Keys are Gaussian with a nonzero per-channel offset so that mean
normalization has something to remove (the raw sign distribution is
unbalanced, the centered one is not). A configurable fraction of queries
points at a specific key row, so top-k selection is meaningful rather than
uniform; the pairing is returned for construction checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class SyntheticWorkload:
    keys: np.ndarray
    values: np.ndarray
    queries: np.ndarray
    window: np.ndarray
    paired_rows: np.ndarray

    @property
    def tokens(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]


def gen_synthetic(tokens: int, dim: int, query_count: int, seed: int,
                  channel_offset: float = 0.5, correlated_fraction: float = 0.5,
                  query_noise: float = 0.25, window: int = 32,
                  channel_scale_spread: float = 0.5) -> SyntheticWorkload:
    """Generate one head's worth of keys, values and queries.

    ``channel_offset`` is the per-channel mean magnitude in units of that
    channel's std; every channel gets the full offset with a random sign.
    ``channel_scale_spread`` makes channel stds lognormal around 1, modeling
    the outlier-channel structure of real key caches (with homogeneous
    channels, centroid scoring collapses to scaled sign scoring and carries
    no extra information). Correlated queries are a scaled key row plus
    ``query_noise`` Gaussian noise; ``paired_rows`` holds the row index, or
    -1 for uncorrelated queries. The window block (for sink selection) is
    drawn the same way as queries. Identical arguments produce byte-identical
    arrays.
    """
    if tokens < 1 or dim < 1:
        raise ValueError(f"tokens and dim must be positive, got {tokens}, {dim}")
    if not 0.0 <= correlated_fraction <= 1.0:
        raise ValueError(f"correlated_fraction must be in [0, 1], got {correlated_fraction}")

    rng = np.random.default_rng(seed)
    scales = np.exp(channel_scale_spread * rng.standard_normal(dim))
    offsets = channel_offset * scales * np.where(rng.random(dim) < 0.5, -1.0, 1.0)
    keys = rng.standard_normal((tokens, dim)) * scales + offsets
    values = rng.standard_normal((tokens, dim))

    def draw_queries(n: int) -> tuple[np.ndarray, np.ndarray]:
        qs = np.empty((n, dim))
        pairs = np.full(n, -1, dtype=np.int64)
        for i in range(n):
            if rng.random() < correlated_fraction:
                row = int(rng.integers(tokens))
                base = keys[row]
                qs[i] = base * (np.sqrt(dim) / np.linalg.norm(base))
                qs[i] += query_noise * rng.standard_normal(dim)
                pairs[i] = row
            else:
                qs[i] = rng.standard_normal(dim)
        return qs, pairs

    queries, paired = draw_queries(query_count)
    window_q, _ = draw_queries(window)
    return SyntheticWorkload(
        keys=keys, values=values, queries=queries, window=window_q, paired_rows=paired
    )
