"""Synthetic workload generator: determinism, entropy shape, query pairing."""

import numpy as np

from sikv import compute_channel_stats, dense_scores, apply_normalization, sign_entropy
from sikv.harness.synth import gen_synthetic


def test_same_seed_is_byte_identical():
    a = gen_synthetic(128, 32, 8, seed=5)
    b = gen_synthetic(128, 32, 8, seed=5)
    for x, y in ((a.keys, b.keys), (a.values, b.values), (a.queries, b.queries),
                 (a.window, b.window), (a.paired_rows, b.paired_rows)):
        assert x.tobytes() == y.tobytes()


def test_different_seed_differs():
    a = gen_synthetic(64, 16, 4, seed=0)
    b = gen_synthetic(64, 16, 4, seed=1)
    assert a.keys.tobytes() != b.keys.tobytes()


def test_zero_offset_keys_are_sign_balanced():
    work = gen_synthetic(4096, 128, 1, seed=2, channel_offset=0.0)
    raw = sign_entropy(np.where(work.keys >= 0, 1.0, -1.0)).mean()
    assert abs(raw - 1.0) <= 0.02


def test_offset_keys_are_sign_unbalanced_until_centered():
    work = gen_synthetic(4096, 128, 1, seed=3, channel_offset=0.5)
    raw = sign_entropy(np.where(work.keys >= 0, 1.0, -1.0)).mean()
    assert raw < 0.95
    centered = apply_normalization(work.keys, compute_channel_stats(work.keys))
    assert sign_entropy(np.where(centered >= 0, 1.0, -1.0)).mean() > raw


def test_fully_correlated_queries_hit_their_pair():
    work = gen_synthetic(1024, 64, 32, seed=4, correlated_fraction=1.0)
    assert (work.paired_rows >= 0).all()
    K_prime = apply_normalization(work.keys, compute_channel_stats(work.keys))
    hits = sum(
        int(np.argmax(dense_scores(q, K_prime))) == pair
        for q, pair in zip(work.queries, work.paired_rows)
    )
    assert hits >= 31  # top-1 by exact scores is the paired key w.p. ~ 1


def test_uncorrelated_queries_have_no_pair():
    work = gen_synthetic(64, 16, 16, seed=5, correlated_fraction=0.0)
    assert (work.paired_rows == -1).all()


def test_window_block_shape():
    work = gen_synthetic(64, 16, 4, seed=6, window=9)
    assert work.window.shape == (9, 16)
