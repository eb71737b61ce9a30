"""Self-indexing KV cache: 1-bit sign-quantized keys whose codes double as the retrieval index.

The pipeline: channel-mean normalization balances sign entropy, 4-bit sign
codes cluster key subvectors in one pass, per-cluster centroids form a
16-entry codebook per group, and query scoring against the whole cache
reduces to table lookups and additions over those same codes. Values and
key magnitudes are token-wise B-bit quantized for random access; sink and
decode tokens stay at full precision.
"""

from .attention import AttentionOutput, ErrorReport, exact_attention, output_error, sparse_attention
from .cache import (
    CacheConfig,
    MemoryReport,
    SelfIndexingCache,
    append_token,
    memory_report,
    memory_report_from_shapes,
    prefill,
    select_sink_tokens,
    select_tokens,
)
from .codebook import (
    Codebook,
    SignCodeMatrix,
    build_codebook,
    encode_keys,
    encode_sign_code,
    sign_pattern_vectors,
)
from .instrument import OpCounters, collect
from .normalize import (
    NormalizationState,
    apply_normalization,
    compute_channel_stats,
    sign_entropy,
)
from .quantizer import (
    QuantConfig,
    QuantizedTensor,
    dequantize_keys,
    dequantize_values,
    quantize_key_magnitudes,
    quantize_values,
)
from .retrieval import (
    LookupTable,
    TokenSelection,
    build_lut,
    build_sign_lut,
    dense_scores,
    resolve_dynamic_k,
    score_tokens,
    top_k_select,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionOutput",
    "CacheConfig",
    "Codebook",
    "ErrorReport",
    "LookupTable",
    "MemoryReport",
    "NormalizationState",
    "OpCounters",
    "QuantConfig",
    "QuantizedTensor",
    "SelfIndexingCache",
    "SignCodeMatrix",
    "TokenSelection",
    "append_token",
    "apply_normalization",
    "build_codebook",
    "build_lut",
    "build_sign_lut",
    "collect",
    "compute_channel_stats",
    "dense_scores",
    "dequantize_keys",
    "dequantize_values",
    "encode_keys",
    "encode_sign_code",
    "exact_attention",
    "memory_report",
    "memory_report_from_shapes",
    "output_error",
    "prefill",
    "quantize_key_magnitudes",
    "quantize_values",
    "resolve_dynamic_k",
    "score_tokens",
    "select_sink_tokens",
    "select_tokens",
    "sign_entropy",
    "sign_pattern_vectors",
    "sparse_attention",
    "top_k_select",
]
