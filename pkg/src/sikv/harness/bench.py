"""Benchmark runners: retrieval recall, attention fidelity, micro-benchmarks.

Every runner is deterministic given its config, builds its own synthetic
workload, and emits one flat record with a stable key set so downstream
tooling can concatenate runs. GPU latencies are out of scope; work is
characterized by operation counters and host wall-clock ratios instead.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np

from ..attention import exact_attention, output_error, sparse_attention
from ..cache import CacheConfig, memory_report, prefill, select_tokens
from ..codebook import SUBVECTOR_DIM, build_codebook, encode_keys
from ..instrument import collect, tally
from ..normalize import apply_normalization
from ..retrieval import dense_scores, resolve_dynamic_k
from .synth import SyntheticWorkload, gen_synthetic

ABLATIONS = ("full", "no_sign_quant", "sign_only_retrieval", "no_sink")

RECORD_KEYS = (
    "bench", "seed", "L", "D", "bits", "budget", "ablation", "recall_at_k",
    "cosine_mean", "cosine_std", "bits_per_token", "savings_fraction",
    "wall_ms", "op_counts",
)


@dataclass(frozen=True)
class BenchConfig:
    tokens: int = 4096
    dim: int = 128
    seed: int = 0
    bits: int = 2
    group_size: int = 32
    sink_count: int = 64
    budget: int | None = None
    sparsity: float | None = None
    ablation: str = "full"
    query_count: int = 16
    channel_offset: float = 0.5
    correlated_fraction: float = 0.5
    query_noise: float = 0.25
    window: int = 32

    def __post_init__(self) -> None:
        if (self.budget is None) == (self.sparsity is None):
            raise ValueError("exactly one of budget and sparsity must be set")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    @property
    def target_tokens(self) -> int:
        """Total kept-token target (forced tokens included)."""
        if self.budget is not None:
            return self.budget
        return int(np.floor(self.sparsity * self.tokens + 0.5))


def make_workload(cfg: BenchConfig) -> SyntheticWorkload:
    return gen_synthetic(
        tokens=cfg.tokens,
        dim=cfg.dim,
        query_count=cfg.query_count,
        seed=cfg.seed,
        channel_offset=cfg.channel_offset,
        correlated_fraction=cfg.correlated_fraction,
        query_noise=cfg.query_noise,
        window=cfg.window,
    )


def cache_config_for(cfg: BenchConfig, ablation: str | None = None) -> CacheConfig:
    ablation = cfg.ablation if ablation is None else ablation
    return CacheConfig(
        bits=cfg.bits,
        group_size=cfg.group_size,
        sink_count=0 if ablation == "no_sink" else cfg.sink_count,
        sign_in_quant=ablation != "no_sign_quant",
    )


def build_cache(cfg: BenchConfig, workload: SyntheticWorkload, ablation: str | None = None):
    return prefill(
        workload.keys,
        workload.values,
        query_window=workload.window,
        config=cache_config_for(cfg, ablation),
    )


def make_record(bench: str, cfg: BenchConfig, **metrics) -> dict:
    record = dict.fromkeys(RECORD_KEYS)
    record.update(
        bench=bench,
        seed=cfg.seed,
        L=cfg.tokens,
        D=cfg.dim,
        bits=cfg.bits,
        budget=cfg.target_tokens,
        ablation=cfg.ablation,
    )
    unknown = set(metrics) - set(RECORD_KEYS)
    if unknown:
        raise ValueError(f"unknown record keys: {sorted(unknown)}")
    record.update(metrics)
    return record


def _dynamic_k(cfg: BenchConfig, cache) -> int:
    forced = cache.forced_indices().size
    k = resolve_dynamic_k(cache.length, forced, budget=cfg.budget, sparsity=cfg.sparsity)
    candidates = cache.length - forced
    if k > candidates:
        warnings.warn(f"budget exceeds cache length; clamping dynamic k from {k} to {candidates}")
        k = candidates
    return k


def run_recall_bench(cfg: BenchConfig, workload: SyntheticWorkload | None = None) -> list[dict]:
    """Recall@k of compressed-domain scoring against the exact-score oracle.

    Emits two records: the configured method and a uniform random-selection
    baseline over the same candidate set (expected recall ~ k / L).
    """
    workload = make_workload(cfg) if workload is None else workload
    cache = build_cache(cfg, workload)
    K_prime = apply_normalization(workload.keys, cache.norm)

    forced = cache.forced_indices()
    candidates = np.setdiff1d(np.arange(cache.length), forced)
    k = _dynamic_k(cfg, cache)
    if k < 1:
        raise ValueError("budget leaves no dynamic tokens; recall@k is undefined")

    sign_only = cfg.ablation == "sign_only_retrieval"
    baseline_rng = np.random.default_rng((cfg.seed, 0xBA5E))
    recalls, random_recalls = [], []
    start = time.perf_counter()
    for q in workload.queries:
        exact = dense_scores(q, K_prime)
        order = np.argsort(-exact[candidates], kind="stable")[:k]
        exact_top = set(candidates[order].tolist())

        selection = select_tokens(cache, q, k=k, sign_only=sign_only)
        dynamic = np.setdiff1d(selection.indices, forced)
        recalls.append(len(exact_top.intersection(dynamic.tolist())) / k)

        random_pick = baseline_rng.choice(candidates, size=k, replace=False)
        random_recalls.append(len(exact_top.intersection(random_pick.tolist())) / k)
    wall_ms = (time.perf_counter() - start) * 1e3

    report = memory_report(cache)
    method = make_record(
        "recall", cfg,
        recall_at_k=float(np.mean(recalls)),
        bits_per_token=report.variable_bits // cache.prefill_length,
        savings_fraction=report.savings_fraction,
        wall_ms=wall_ms,
    )
    baseline = dict(method)
    baseline.update(ablation="random_baseline", recall_at_k=float(np.mean(random_recalls)))
    return [method, baseline]


def run_attention_bench(cfg: BenchConfig, workload: SyntheticWorkload | None = None) -> dict:
    """Cosine similarity of sparse attention against the exact full-cache oracle."""
    workload = make_workload(cfg) if workload is None else workload
    cache = build_cache(cfg, workload)
    K_prime = apply_normalization(workload.keys, cache.norm)
    k = _dynamic_k(cfg, cache)
    sign_only = cfg.ablation == "sign_only_retrieval"

    cosines = []
    start = time.perf_counter()
    for q in workload.queries:
        selection = select_tokens(cache, q, k=k, sign_only=sign_only)
        approx = sparse_attention(q, selection, cache)
        exact = exact_attention(q, K_prime, workload.values)
        cosines.append(output_error(approx, exact).cosine_sim)
    wall_ms = (time.perf_counter() - start) * 1e3

    report = memory_report(cache)
    return make_record(
        "attn", cfg,
        cosine_mean=float(np.mean(cosines)),
        cosine_std=float(np.std(cosines)),
        bits_per_token=report.variable_bits // cache.prefill_length,
        savings_fraction=report.savings_fraction,
        wall_ms=wall_ms,
    )


def kmeans_codebook(keys_norm, iterations: int = 20, seed: int = 0) -> np.ndarray:
    """Lloyd's k-means over each group's subvectors; the iterative baseline.

    Exists only as the cost comparator for the one-pass build: every
    iteration rescans all L*G subvectors for assignment, which is exactly
    the work the sign-based construction avoids.
    """
    K = np.asarray(keys_norm, dtype=np.float64)
    L, D = K.shape
    G = D // SUBVECTOR_DIM
    sub = K.reshape(L, G, SUBVECTOR_DIM)
    rng = np.random.default_rng(seed)
    init = rng.choice(L, size=16, replace=L < 16)
    centroids = sub[init].transpose(1, 0, 2).copy()  # (G, 16, 4)

    group_idx = np.broadcast_to(np.arange(G, dtype=np.intp), (L, G))
    for _ in range(iterations):
        x2 = (sub ** 2).sum(axis=2, keepdims=True)
        c2 = (centroids ** 2).sum(axis=2)
        cross = np.einsum("lgd,gkd->lgk", sub, centroids)
        assign = (x2 + c2[None, :, :] - 2 * cross).argmin(axis=2)
        tally("kmeans_subvector_reads", L * G)

        sums = np.zeros_like(centroids)
        counts = np.zeros((G, 16), dtype=np.int64)
        np.add.at(sums, (group_idx, assign), sub)
        np.add.at(counts, (group_idx, assign), 1)
        nonempty = counts > 0
        centroids = np.where(
            nonempty[:, :, None],
            np.divide(sums, counts[:, :, None], out=np.zeros_like(sums), where=nonempty[:, :, None]),
            centroids,
        )
    return centroids


def run_micro_bench(cfg: BenchConfig, workload: SyntheticWorkload | None = None) -> dict:
    """Operation counts and wall-clock ratios for the three hot stages.

    (a) LUT scoring vs dense scoring op counts, (b) one-pass codebook build
    vs a 20-iteration k-means on the same data, (c) sparse vs full attention
    at the configured budget. No absolute latency thresholds.
    """
    workload = make_workload(cfg) if workload is None else workload
    cache = build_cache(cfg, workload)
    K_prime = apply_normalization(workload.keys, cache.norm)
    q0 = workload.queries[0]

    with collect() as lut_ops:
        select_tokens(cache, q0, k=_dynamic_k(cfg, cache))
    with collect() as dense_ops:
        dense_scores(q0, K_prime)

    start = time.perf_counter()
    with collect() as build_ops:
        build_codebook(K_prime, encode_keys(K_prime))
    onepass_ms = (time.perf_counter() - start) * 1e3

    start = time.perf_counter()
    with collect() as kmeans_ops:
        kmeans_codebook(K_prime, iterations=20, seed=cfg.seed)
    kmeans_ms = (time.perf_counter() - start) * 1e3

    k = _dynamic_k(cfg, cache)
    selections = [select_tokens(cache, q, k=k) for q in workload.queries]
    start = time.perf_counter()
    for q, sel in zip(workload.queries, selections):
        sparse_attention(q, sel, cache)
    sparse_ms = (time.perf_counter() - start) * 1e3
    start = time.perf_counter()
    for q in workload.queries:
        exact_attention(q, K_prime, workload.values)
    full_ms = (time.perf_counter() - start) * 1e3

    report = memory_report(cache)
    return make_record(
        "micro", cfg,
        bits_per_token=report.variable_bits // cache.prefill_length,
        savings_fraction=report.savings_fraction,
        wall_ms={
            "onepass_build": onepass_ms,
            "kmeans20_build": kmeans_ms,
            "sparse_attention": sparse_ms,
            "full_attention": full_ms,
        },
        op_counts={
            "lut_lookups": lut_ops.lut_lookups,
            "lut_adds": lut_ops.lut_adds,
            "score_muls": lut_ops.score_muls,
            "dense_muls": dense_ops.dense_muls,
            "dense_adds": dense_ops.dense_adds,
            "onepass_subvector_reads": build_ops.codebook_subvector_reads,
            "kmeans_subvector_reads": kmeans_ops.kmeans_subvector_reads,
        },
    )
