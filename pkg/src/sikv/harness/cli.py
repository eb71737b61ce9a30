"""Command-line harness: workload generation, prefill, benches, accounting.

Every verb prints line-delimited JSON records on stdout (one per line, a
stable key set) and human notes on stderr. With ``--check`` a verb verifies
its own invariants and exits nonzero on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from ..cache import memory_report, memory_report_from_shapes, prefill
from .bench import (
    ABLATIONS,
    BenchConfig,
    build_cache,
    make_record,
    make_workload,
    run_attention_bench,
    run_micro_bench,
    run_recall_bench,
)
from .synth import SyntheticWorkload, gen_synthetic
from .tensorfile import load_tensor, save_tensor

_DEFAULT = BenchConfig(budget=160)


def _add_shape_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tokens", type=int, default=_DEFAULT.tokens, help="context length L")
    p.add_argument("--dim", type=int, default=_DEFAULT.dim, help="head dimension D")
    p.add_argument("--seed", type=int, default=0)


def _add_cache_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bits", type=int, default=_DEFAULT.bits, choices=(1, 2, 4, 8, 16))
    p.add_argument("--group-size", type=int, default=_DEFAULT.group_size)
    p.add_argument("--sink", type=int, default=_DEFAULT.sink_count, help="full-precision sink tokens")


def _add_synth_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--offset", type=float, default=_DEFAULT.channel_offset,
                   help="per-channel key mean offset, in key-std units")
    p.add_argument("--correlated", type=float, default=_DEFAULT.correlated_fraction,
                   help="fraction of queries paired with a key row")
    p.add_argument("--noise", type=float, default=_DEFAULT.query_noise)


def _add_bench_flags(p: argparse.ArgumentParser, ablations=ABLATIONS) -> None:
    _add_shape_flags(p)
    _add_cache_flags(p)
    _add_synth_flags(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--budget", type=int, help="total kept tokens (forced included)")
    group.add_argument("--sparsity", type=float, help="kept fraction of the context")
    p.add_argument("--queries", type=int, default=_DEFAULT.query_count)
    p.add_argument("--ablation", default="full", choices=ablations)
    p.add_argument("--input-k")
    p.add_argument("--input-v")
    p.add_argument("--input-q")
    p.add_argument("--out", help="also append records to this file")
    p.add_argument("--check", action="store_true", help="verify invariants; exit nonzero on failure")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sikv",
        description="Self-indexing KV cache benchmarks: compression whose codes are the retrieval index.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("gen", help="write a synthetic K/V/query workload as tensor files")
    _add_shape_flags(p)
    _add_synth_flags(p)
    p.add_argument("--queries", type=int, default=_DEFAULT.query_count)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--check", action="store_true")

    p = sub.add_parser("prefill", help="build a cache and report timing plus memory")
    _add_bench_flags(p)

    p = sub.add_parser("recall", help="retrieval recall@k against the exact-score oracle")
    _add_bench_flags(p)

    p = sub.add_parser("attn", help="sparse-attention fidelity against the exact oracle")
    _add_bench_flags(p, ablations=ABLATIONS + ("all",))

    p = sub.add_parser("micro", help="op counters and wall-clock ratios for the hot stages")
    _add_bench_flags(p)

    p = sub.add_parser("memory", help="bit-exact accounting from shapes alone")
    _add_shape_flags(p)
    _add_cache_flags(p)
    p.add_argument("--out")
    p.add_argument("--check", action="store_true")
    return parser


def _bench_config(args, ablation: str | None = None) -> BenchConfig:
    budget, sparsity = args.budget, args.sparsity
    if budget is None and sparsity is None:
        budget = 160
    return BenchConfig(
        tokens=args.tokens,
        dim=args.dim,
        seed=args.seed,
        bits=args.bits,
        group_size=args.group_size,
        sink_count=args.sink,
        budget=budget,
        sparsity=sparsity,
        ablation=ablation if ablation is not None else args.ablation,
        query_count=args.queries,
        channel_offset=args.offset,
        correlated_fraction=args.correlated,
        query_noise=args.noise,
    )


def _with_workload_shapes(cfg: BenchConfig, workload: SyntheticWorkload | None) -> BenchConfig:
    if workload is None:
        return cfg
    return dataclasses.replace(cfg, tokens=workload.tokens, dim=workload.dim)


def _load_workload(args) -> SyntheticWorkload | None:
    """File-backed workload when --input-k/v/q are given, else None (synthesize)."""
    paths = (args.input_k, args.input_v, args.input_q)
    if all(p is None for p in paths):
        return None
    if any(p is None for p in paths):
        raise SystemExit("gen inputs require all of --input-k, --input-v, --input-q")
    keys = np.asarray(load_tensor(args.input_k), dtype=np.float64)
    values = np.asarray(load_tensor(args.input_v), dtype=np.float64)
    queries = np.asarray(load_tensor(args.input_q), dtype=np.float64)
    # the leading queries double as the prefill window for sink selection
    window = queries[: min(len(queries), _DEFAULT.window)]
    pairs = np.full(len(queries), -1, dtype=np.int64)
    return SyntheticWorkload(keys=keys, values=values, queries=queries,
                             window=window, paired_rows=pairs)


def _emit(records, out_path: str | None) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in records]
    for line in lines:
        print(line)
    if out_path:
        with open(out_path, "a", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in lines))


def _fail_check(message: str) -> int:
    print(f"check failed: {message}", file=sys.stderr)
    return 1


def _cmd_gen(args) -> int:
    work = gen_synthetic(args.tokens, args.dim, args.queries, args.seed,
                         channel_offset=args.offset, correlated_fraction=args.correlated,
                         query_noise=args.noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(work.keys, out / "keys.kvt")
    save_tensor(work.values, out / "values.kvt")
    save_tensor(work.queries, out / "queries.kvt")
    save_tensor(work.window, out / "window.kvt")
    print(f"wrote keys/values/queries/window to {out}", file=sys.stderr)
    if args.check:
        again = gen_synthetic(args.tokens, args.dim, args.queries, args.seed,
                              channel_offset=args.offset, correlated_fraction=args.correlated,
                              query_noise=args.noise)
        if not (np.array_equal(work.keys, again.keys)
                and np.array_equal(work.values, again.values)
                and np.array_equal(work.queries, again.queries)):
            return _fail_check("generator is not deterministic for this config")
    return 0


def _cmd_prefill(args) -> int:
    cfg = _bench_config(args)
    loaded = _load_workload(args)
    cfg = _with_workload_shapes(cfg, loaded)
    work = loaded or make_workload(cfg)
    start = time.perf_counter()
    cache = build_cache(cfg, work)
    wall_ms = (time.perf_counter() - start) * 1e3
    report = memory_report(cache)
    record = make_record(
        "prefill", cfg,
        bits_per_token=report.variable_bits // cache.prefill_length,
        savings_fraction=report.savings_fraction,
        wall_ms=wall_ms,
    )
    _emit([record], args.out)
    print(f"cache checksum: {cache.checksum()}", file=sys.stderr)
    if args.check and build_cache(cfg, work).checksum() != cache.checksum():
        return _fail_check("prefill is not deterministic for this config")
    return 0


def _cmd_recall(args) -> int:
    workload = _load_workload(args)
    cfg = _with_workload_shapes(_bench_config(args), workload)
    records = run_recall_bench(cfg, workload=workload)
    _emit(records, args.out)
    if args.check:
        method = records[0]["recall_at_k"]
        uniform = cfg.target_tokens / cfg.tokens
        # 10x the uniform baseline at low keep-rates; saturates once 10x is unreachable
        bar = min(10 * uniform, 0.5)
        if method < bar:
            return _fail_check(f"recall {method:.4f} is below the {bar:.4f} bar "
                               f"(uniform baseline {uniform:.4f})")
    return 0


def _cmd_attn(args) -> int:
    ablations = ABLATIONS if args.ablation == "all" else (args.ablation,)
    workload = _load_workload(args)
    records = [
        run_attention_bench(_with_workload_shapes(_bench_config(args, ablation=a), workload),
                            workload=workload)
        for a in ablations
    ]
    _emit(records, args.out)
    if args.check:
        by_name = {r["ablation"]: r["cosine_mean"] for r in records}
        full = by_name.get("full")
        if full is not None and full < 0.5:
            return _fail_check(f"full-method cosine {full:.4f} is below the 0.5 smoke floor")
        for degraded in ("no_sign_quant", "sign_only_retrieval"):
            if full is not None and degraded in by_name and full < by_name[degraded]:
                return _fail_check(f"full-method cosine is below the {degraded} ablation")
    return 0


def _cmd_micro(args) -> int:
    workload = _load_workload(args)
    cfg = _with_workload_shapes(_bench_config(args), workload)
    record = run_micro_bench(cfg, workload=workload)
    _emit([record], args.out)
    if args.check:
        L, G = cfg.tokens, cfg.dim // 4
        ops = record["op_counts"]
        if ops["lut_lookups"] != L * G or ops["score_muls"] != 0:
            return _fail_check("LUT scoring op counts violate the L*G lookups / zero muls contract")
        if ops["onepass_subvector_reads"] != L * G:
            return _fail_check("codebook build touched subvectors more than once")
        if ops["kmeans_subvector_reads"] != 20 * L * G:
            return _fail_check("k-means oracle scan count is off")
    return 0


def _cmd_memory(args) -> int:
    report = memory_report_from_shapes(
        tokens=args.tokens, dim=args.dim, bits=args.bits,
        group_size=args.group_size, sink_count=args.sink,
    )
    cfg = BenchConfig(
        tokens=args.tokens, dim=args.dim, bits=args.bits, group_size=args.group_size,
        sink_count=args.sink, budget=0,
    )
    record = make_record(
        "memory", cfg,
        bits_per_token=report.variable_bits // args.tokens,
        savings_fraction=report.savings_fraction,
    )
    _emit([record], args.out)
    if args.check:
        parts = report.sign_bits + report.payload_bits + report.param_bits \
            + report.fixed_bits + report.recent_bits
        if report.total_bits != parts:
            return _fail_check("total_bits does not equal the sum of its components")
        if (args.dim, args.bits, args.group_size) == (128, 2, 32):
            if report.variable_bits != 896 * args.tokens or report.savings_fraction != 0.78125:
                return _fail_check("default config must cost 896 bits/token (78.125% savings)")
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "prefill": _cmd_prefill,
    "recall": _cmd_recall,
    "attn": _cmd_attn,
    "micro": _cmd_micro,
    "memory": _cmd_memory,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.verb](args)


if __name__ == "__main__":
    sys.exit(main())
