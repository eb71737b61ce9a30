"""Channel statistics and entropy-aware mean normalization of the key cache.

Subtracting each channel's mean balances the sign distribution per channel,
which is what makes 1-bit sign codes informative. Attention itself is
unaffected because softmax is invariant to the additive shift this induces
in the query-key scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_matrix(x, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one row")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class NormalizationState:
    """Per-channel mean and per-channel max-magnitude scale of one head's keys.

    ``alpha`` is taken over the mean-normalized keys K' = K - mu, because the
    sign plane and the magnitude plane are both extracted from K'.
    ``alpha[j] == 0`` only when channel j of K' is identically zero.
    """

    mu: np.ndarray
    alpha: np.ndarray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if mu.ndim != 1 or alpha.ndim != 1 or mu.shape != alpha.shape:
            raise ValueError(
                f"mu and alpha must be 1-D with equal length, got {mu.shape} and {alpha.shape}"
            )
        if (alpha < 0).any():
            raise ValueError("alpha must be non-negative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "alpha", alpha)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


def compute_channel_stats(keys) -> NormalizationState:
    """Column means of the key matrix and max |K'| per column after centering."""
    K = _as_matrix(keys, "keys")
    mu = K.mean(axis=0)
    alpha = np.abs(K - mu).max(axis=0)
    return NormalizationState(mu=mu, alpha=alpha)


def apply_normalization(keys, state: NormalizationState) -> np.ndarray:
    """Return K' = K - mu with mu broadcast across rows."""
    K = _as_matrix(keys, "keys")
    if K.shape[1] != state.dim:
        raise ValueError(f"keys have {K.shape[1]} channels, state has {state.dim}")
    return K - state.mu


def sign_entropy(signs) -> np.ndarray:
    """Empirical binary entropy (bits) of each channel of a {-1, +1} matrix.

    Uses the 0 * log 0 = 0 convention, so a constant channel scores 0.0 and a
    perfectly balanced channel scores 1.0.
    """
    S = np.asarray(signs, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 1:
        raise ValueError(f"signs must be a non-empty 2-D matrix, got shape {S.shape}")
    if not np.isin(S, (-1.0, 1.0)).all():
        raise ValueError("sign matrix entries must be -1 or +1")
    p = (S > 0).mean(axis=0)
    out = np.zeros_like(p)
    interior = (p > 0) & (p < 1)
    pi = p[interior]
    out[interior] = -(pi * np.log2(pi) + (1 - pi) * np.log2(1 - pi))
    return out
