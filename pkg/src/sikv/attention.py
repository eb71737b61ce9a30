"""Sparse attention over a selected token set, plus the exact oracle.

All attention here runs over mean-normalized keys K'. The channel means
never need to be added back: softmax is invariant to the additive shift
mu . q / sqrt(D) that centering induces in every score, so attention over
K' is attention over K.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .normalize import _as_matrix
from .retrieval import TokenSelection, _as_query

if TYPE_CHECKING:
    from .cache import SelfIndexingCache


@dataclass(frozen=True, eq=False)
class AttentionOutput:
    out: np.ndarray
    weights_checksum: float


@dataclass(frozen=True, eq=False)
class ErrorReport:
    cosine_sim: float
    rel_l2: float


def _softmax_attend(q: np.ndarray, K: np.ndarray, V: np.ndarray) -> AttentionOutput:
    logits = (K @ q) / np.sqrt(K.shape[1])
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    return AttentionOutput(out=weights @ V, weights_checksum=float(weights.sum()))


def exact_attention(q, keys, values) -> AttentionOutput:
    """Full softmax(q . K^T / sqrt(D)) V over every token, max-stabilized."""
    K = _as_matrix(keys, "keys")
    V = _as_matrix(values, "values")
    if K.shape != V.shape:
        raise ValueError(f"keys and values must match, got {K.shape} and {V.shape}")
    q = _as_query(q, dim=K.shape[1])
    return _softmax_attend(q, K, V)


def sparse_attention(q, selection: TokenSelection, cache: "SelfIndexingCache") -> AttentionOutput:
    """Attention restricted to the selected tokens of a compressed cache.

    Dynamic tokens are dequantized on the fly (only the selected rows are
    touched); sink and recent tokens use their stored full-precision rows.
    """
    if len(selection) == 0:
        raise ValueError("selection is empty")
    q = _as_query(q, dim=cache.dim)
    K_rows, V_rows = cache.gather(selection.indices)
    return _softmax_attend(q, K_rows, V_rows)


def output_error(a: AttentionOutput, b: AttentionOutput) -> ErrorReport:
    """Cosine similarity and relative L2 of two outputs, with b as reference."""
    x = np.asarray(a.out, dtype=np.float64)
    y = np.asarray(b.out, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"outputs must have equal shape, got {x.shape} and {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 and ny == 0.0:
        cosine = 1.0
    elif nx == 0.0 or ny == 0.0:
        cosine = 0.0
    else:
        cosine = float(np.dot(x, y) / (nx * ny))
    diff = np.linalg.norm(x - y)
    if diff == 0.0:
        rel = 0.0
    elif ny == 0.0:
        rel = float("inf")
    else:
        rel = float(diff / ny)
    return ErrorReport(cosine_sim=cosine, rel_l2=rel)
