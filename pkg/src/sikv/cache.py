"""The compressed per-head cache: prefill pipeline, decode appends, accounting.

Prefill freezes the channel statistics, encodes the sign plane (which is
also the retrieval index), builds the codebook, and quantizes the key
magnitude and value planes. A small set of sink tokens plus everything
appended during decode stay at full precision and are force-included in
every selection.

Memory accounting models the deployed format: 1 sign bit per key element,
B-bit payloads, 16-bit group parameters, and full-precision rows at the
16-bit model precision. The working arrays in RAM are wider; the report is
about the format, not the Python process.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from .codebook import Codebook, SignCodeMatrix, build_codebook, encode_keys
from .normalize import NormalizationState, _as_matrix, apply_normalization, compute_channel_stats
from .quantizer import (
    QuantConfig,
    QuantizedTensor,
    dequantize_keys,
    dequantize_values,
    quantize_key_magnitudes,
    quantize_values,
)
from .retrieval import (
    TokenSelection,
    _as_query,
    build_lut,
    build_sign_lut,
    resolve_dynamic_k,
    score_tokens,
    top_k_select,
)

FULL_PRECISION_BITS = 16
PARAM_PRECISION_BITS = 16
INDEX_BITS = 32
LOSSLESS_BITS = 16

DEFAULT_SINK_COUNT = 64
DEFAULT_POOL_WIDTH = 7


@dataclass(frozen=True)
class CacheConfig:
    """Prefill-time knobs. ``bits == 16`` bypasses quantization entirely
    (full-precision payload, no group parameters); ``sign_in_quant = False``
    quantizes K' directly with signed codes instead of recomposing
    sign * magnitude, leaving the sign plane as a retrieval-only index."""

    bits: int = 2
    group_size: int = 32
    sink_count: int = DEFAULT_SINK_COUNT
    sign_in_quant: bool = True
    sink_pool_width: int = DEFAULT_POOL_WIDTH

    def __post_init__(self) -> None:
        if self.bits not in (1, 2, 4, 8, LOSSLESS_BITS):
            raise ValueError(f"bits must be 1, 2, 4, 8 or {LOSSLESS_BITS}, got {self.bits}")
        if self.sink_count < 0:
            raise ValueError(f"sink_count must be non-negative, got {self.sink_count}")
        if self.sink_pool_width < 1 or self.sink_pool_width % 2 == 0:
            raise ValueError("sink_pool_width must be odd and positive")

    @property
    def lossless(self) -> bool:
        return self.bits == LOSSLESS_BITS


@dataclass(eq=False)
class SelfIndexingCache:
    """One head's compressed KV cache; the sign codes double as its index.

    Immutable after prefill except for the recent-token buffer: appends are
    the single writer, reads (retrieval, attention) never mutate anything.
    """

    config: CacheConfig
    dim: int
    prefill_length: int
    norm: NormalizationState
    codes: SignCodeMatrix
    codebook: Codebook
    key_mag: QuantizedTensor | None
    key_direct: QuantizedTensor | None
    values: QuantizedTensor | None
    kprime_full: np.ndarray | None
    values_full: np.ndarray | None
    sink_indices: np.ndarray
    sink_k: np.ndarray
    sink_v: np.ndarray
    _recent_k: list[np.ndarray] = field(default_factory=list)
    _recent_v: list[np.ndarray] = field(default_factory=list)

    @property
    def length(self) -> int:
        """Prefill tokens plus everything appended during decode."""
        return self.prefill_length + len(self._recent_k)

    @property
    def recent_count(self) -> int:
        return len(self._recent_k)

    def recent_indices(self) -> np.ndarray:
        return np.arange(self.prefill_length, self.length, dtype=np.int64)

    def forced_indices(self) -> np.ndarray:
        return np.union1d(self.sink_indices, self.recent_indices())

    def gather(self, indices) -> tuple[np.ndarray, np.ndarray]:
        """K' and V rows for the given token indices.

        Sink and recent rows come from full-precision storage; everything
        else is dequantized on demand, touching only the requested rows.
        """
        idx = np.asarray(indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ValueError("indices must be 1-D")
        if idx.size and (idx.min() < 0 or idx.max() >= self.length):
            raise ValueError(f"indices out of range [0, {self.length})")

        K_rows = np.empty((idx.size, self.dim), dtype=np.float64)
        V_rows = np.empty((idx.size, self.dim), dtype=np.float64)

        recent = idx >= self.prefill_length
        sink = ~recent & np.isin(idx, self.sink_indices)
        dynamic = ~recent & ~sink

        if recent.any():
            rel = idx[recent] - self.prefill_length
            K_rows[recent] = np.stack([self._recent_k[i] for i in rel])
            V_rows[recent] = np.stack([self._recent_v[i] for i in rel])
        if sink.any():
            pos = np.searchsorted(self.sink_indices, idx[sink])
            K_rows[sink] = self.sink_k[pos]
            V_rows[sink] = self.sink_v[pos]
        if dynamic.any():
            rows = idx[dynamic]
            if self.config.lossless:
                K_rows[dynamic] = self.kprime_full[rows]
                V_rows[dynamic] = self.values_full[rows]
            else:
                if self.config.sign_in_quant:
                    K_rows[dynamic] = dequantize_keys(
                        self.key_mag, self.norm.alpha, self.codes, rows=rows
                    )
                else:
                    K_rows[dynamic] = dequantize_values(self.key_direct, rows=rows)
                V_rows[dynamic] = dequantize_values(self.values, rows=rows)
        return K_rows, V_rows

    def checksum(self) -> str:
        """SHA-256 over every stored plane; read paths must never change it."""
        h = hashlib.sha256()
        for arr in (
            self.norm.mu,
            self.norm.alpha,
            self.codes.packed,
            self.codebook.centroids,
            self.sink_indices,
            self.sink_k,
            self.sink_v,
            *self._recent_k,
            *self._recent_v,
        ):
            h.update(np.ascontiguousarray(arr).tobytes())
        for q in (self.key_mag, self.key_direct, self.values):
            if q is not None:
                for arr in (q.packed, q.scales, q.zeros):
                    h.update(np.ascontiguousarray(arr).tobytes())
        for arr in (self.kprime_full, self.values_full):
            if arr is not None:
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def select_sink_tokens(keys_norm, query_window, count: int, pool_width: int = DEFAULT_POOL_WIDTH) -> np.ndarray:
    """Pick the tokens the prompt's own query window attends to most.

    Sums each window query's exact attention weights per key, smooths with a
    width-``pool_width`` positional max-pool so neighborhoods survive, and
    keeps the ``count`` highest (ties toward the lower index).
    """
    if count == 0:
        return np.empty(0, dtype=np.int64)
    K = _as_matrix(keys_norm, "keys_norm")
    W = _as_matrix(query_window, "query_window")
    if W.shape[1] != K.shape[1]:
        raise ValueError(f"window queries have {W.shape[1]} channels, keys have {K.shape[1]}")
    L = K.shape[0]
    if count >= L:
        return np.arange(L, dtype=np.int64)

    logits = (K @ W.T) / np.sqrt(K.shape[1])
    logits -= logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    weights /= weights.sum(axis=0, keepdims=True)
    votes = weights.sum(axis=1)
    pooled = maximum_filter1d(votes, size=pool_width, mode="nearest")
    order = np.argsort(-pooled, kind="stable")[:count]
    return np.sort(order).astype(np.int64)


def prefill(keys, values, query_window=None, config: CacheConfig = CacheConfig()) -> SelfIndexingCache:
    """Run the full compression pipeline over a prompt's K/V tensors.

    Stats -> centering -> sign codes -> codebook -> magnitude and value
    quantization -> sink selection. Without a query window the first
    ``sink_count`` positions serve as sinks. Deterministic for fixed inputs.
    """
    K = _as_matrix(keys, "keys")
    V = _as_matrix(values, "values")
    if K.shape != V.shape:
        raise ValueError(f"keys and values must match, got {K.shape} and {V.shape}")
    L, D = K.shape
    if D % 4 != 0:
        raise ValueError(f"channel count {D} must be divisible by 4")
    if not config.lossless and D % config.group_size != 0:
        raise ValueError(f"channel count {D} not divisible by group_size {config.group_size}")

    norm = compute_channel_stats(K)
    K_prime = apply_normalization(K, norm)
    codes = encode_keys(K_prime)
    codebook = build_codebook(K_prime, codes)

    key_mag = key_direct = values_q = None
    kprime_full = values_full = None
    if config.lossless:
        kprime_full = K_prime.copy()
        values_full = V.copy()
    else:
        qcfg = QuantConfig(bits=config.bits, group_size=config.group_size)
        if config.sign_in_quant:
            key_mag = quantize_key_magnitudes(K_prime, norm.alpha, qcfg)
        else:
            key_direct = quantize_values(K_prime, qcfg)
        values_q = quantize_values(V, qcfg)

    if config.sink_count == 0:
        sink_indices = np.empty(0, dtype=np.int64)
    elif query_window is not None:
        sink_indices = select_sink_tokens(
            K_prime, query_window, config.sink_count, config.sink_pool_width
        )
    else:
        sink_indices = np.arange(min(config.sink_count, L), dtype=np.int64)

    return SelfIndexingCache(
        config=config,
        dim=D,
        prefill_length=L,
        norm=norm,
        codes=codes,
        codebook=codebook,
        key_mag=key_mag,
        key_direct=key_direct,
        values=values_q,
        kprime_full=kprime_full,
        values_full=values_full,
        sink_indices=sink_indices,
        sink_k=K_prime[sink_indices].copy(),
        sink_v=V[sink_indices].copy(),
    )


def append_token(cache: SelfIndexingCache, k, v) -> None:
    """Store one decode-stage token at full precision in the recent buffer.

    The key is centered with the frozen prefill means; nothing else in the
    cache changes, and the token is force-included in later selections.
    """
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if k.shape != (cache.dim,) or v.shape != (cache.dim,):
        raise ValueError(f"k and v must have shape ({cache.dim},)")
    if not (np.isfinite(k).all() and np.isfinite(v).all()):
        raise ValueError("appended token contains non-finite entries")
    cache._recent_k.append(k - cache.norm.mu)
    cache._recent_v.append(v.copy())


def select_tokens(cache: SelfIndexingCache, q, k: int | None = None,
                  budget: int | None = None, sparsity: float | None = None,
                  sign_only: bool = False) -> TokenSelection:
    """Score the compressed cache for one query and select tokens to attend.

    Give exactly one of ``k`` (dynamic count), ``budget`` (total tokens) or
    ``sparsity`` (fraction of cache length). Sink and recent tokens are
    force-included and never scored.
    """
    q = _as_query(q, dim=cache.dim)
    lut = build_sign_lut(q, cache.codes.num_groups) if sign_only else build_lut(q, cache.codebook)
    prefill_scores = score_tokens(lut, cache.codes)
    scores = np.concatenate([prefill_scores, np.full(cache.recent_count, -np.inf)])

    forced = cache.forced_indices()
    if k is None:
        k = resolve_dynamic_k(cache.length, forced.size, budget=budget, sparsity=sparsity)
    elif budget is not None or sparsity is not None:
        raise ValueError("give exactly one of k, budget and sparsity")
    return top_k_select(scores, k, sink=cache.sink_indices, recent=cache.recent_indices())


@dataclass(frozen=True)
class MemoryReport:
    """Bit-exact accounting of one head's cache in the deployed format.

    ``savings_fraction`` compares only the variable (per-token) planes
    against a 16-bit full cache; fixed overhead and the recent buffer are
    reported separately because they do not scale with context length.
    """

    sign_bits: int
    payload_bits: int
    param_bits: int
    fixed_bits: int
    recent_bits: int
    total_bits: int
    baseline_bits: int
    savings_fraction: float

    @property
    def variable_bits(self) -> int:
        return self.sign_bits + self.payload_bits + self.param_bits

    @property
    def compression_ratio(self) -> float:
        return self.baseline_bits / self.variable_bits


def memory_report_from_shapes(tokens: int, dim: int, bits: int = 2, group_size: int = 32,
                              sink_count: int = DEFAULT_SINK_COUNT,
                              recent_count: int = 0) -> MemoryReport:
    """Accounting from shapes alone; every quantity is exact integer arithmetic."""
    if tokens < 1 or dim < 4 or dim % 4 != 0:
        raise ValueError(f"invalid shape {tokens}x{dim}: dim must be a positive multiple of 4")
    if bits != LOSSLESS_BITS and dim % group_size != 0:
        raise ValueError(f"channel count {dim} not divisible by group_size {group_size}")
    L, D = tokens, dim
    groups = D // 4
    sign_bits = L * D
    payload_bits = 2 * bits * L * D
    if bits == LOSSLESS_BITS:
        param_bits = 0
    else:
        param_bits = 2 * (D // group_size) * L * 2 * PARAM_PRECISION_BITS
    codebook_bits = groups * 16 * 4 * FULL_PRECISION_BITS
    norm_bits = 2 * D * FULL_PRECISION_BITS
    sink_bits = sink_count * (2 * D * FULL_PRECISION_BITS + INDEX_BITS)
    fixed_bits = codebook_bits + norm_bits + sink_bits
    recent_bits = recent_count * 2 * D * FULL_PRECISION_BITS
    baseline_bits = 2 * L * D * FULL_PRECISION_BITS
    variable = sign_bits + payload_bits + param_bits
    return MemoryReport(
        sign_bits=sign_bits,
        payload_bits=payload_bits,
        param_bits=param_bits,
        fixed_bits=fixed_bits,
        recent_bits=recent_bits,
        total_bits=variable + fixed_bits + recent_bits,
        baseline_bits=baseline_bits,
        savings_fraction=1.0 - variable / baseline_bits,
    )


def memory_report(cache: SelfIndexingCache) -> MemoryReport:
    """Accounting for a live cache; depends only on its shapes."""
    return memory_report_from_shapes(
        tokens=cache.prefill_length,
        dim=cache.dim,
        bits=cache.config.bits,
        group_size=cache.config.group_size,
        sink_count=int(cache.sink_indices.size),
        recent_count=cache.recent_count,
    )
