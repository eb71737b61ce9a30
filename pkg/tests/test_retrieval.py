"""Lookup-table scoring and top-k selection."""

import numpy as np
import pytest

from sikv import (
    build_codebook,
    build_lut,
    build_sign_lut,
    dense_scores,
    encode_keys,
    resolve_dynamic_k,
    score_tokens,
    top_k_select,
)
from sikv.instrument import collect


def _singleton_codebook():
    """One group whose only occupied cluster is code 10."""
    K = np.array([[0.5, -0.3, 1.2, -0.1]])
    return build_codebook(K, encode_keys(K))


class TestBuildLut:
    def test_unit_query_picks_first_component(self):
        lut = build_lut([1.0, 0.0, 0.0, 0.0], _singleton_codebook())
        assert lut.table.shape == (1, 16)
        assert lut.table[0, 10] == pytest.approx(0.5)

    def test_zero_query_zero_table(self):
        lut = build_lut(np.zeros(4), _singleton_codebook())
        np.testing.assert_array_equal(lut.table, np.zeros((1, 16)))

    def test_empty_cluster_scores_zero(self):
        lut = build_lut(np.ones(4) * 7.0, _singleton_codebook())
        assert lut.table[0, 3] == 0.0

    def test_matches_manual_dot_products(self):
        rng = np.random.default_rng(0)
        K = rng.standard_normal((64, 12))
        cb = build_codebook(K, encode_keys(K))
        q = rng.standard_normal(12)
        lut = build_lut(q, cb)
        for g in range(3):
            for j in range(16):
                assert lut.table[g, j] == pytest.approx(q[4 * g : 4 * g + 4] @ cb.centroids[g, j])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="channels"):
            build_lut(np.ones(8), _singleton_codebook())


class TestScoreTokens:
    def test_singleton_clusters_make_scores_exact(self):
        rng = np.random.default_rng(1)
        # 16 distinct sign patterns per group, one vector each
        patterns = np.array(
            [[(1.0 if (j >> (3 - p)) & 1 else -1.0) for p in range(4)] for j in range(16)]
        )
        K = np.hstack([np.abs(rng.standard_normal((16, 4))) * patterns for _ in range(3)])
        codes = encode_keys(K)
        cb = build_codebook(K, codes)
        q = rng.standard_normal(12)
        approx = score_tokens(build_lut(q, cb), codes)
        exact = K @ q
        np.testing.assert_allclose(approx, exact, rtol=1e-6)

    def test_zero_table_zero_scores(self):
        K = np.ones((5, 4))
        codes = encode_keys(K)
        lut = build_lut(np.zeros(4), build_codebook(K, codes))
        np.testing.assert_array_equal(score_tokens(lut, codes), np.zeros(5))

    def test_identical_codes_identical_scores(self):
        K = np.array([[1.0, -2.0, 3.0, -4.0], [9.0, -1.0, 0.5, -0.1]])  # same sign pattern
        codes = encode_keys(K)
        scores = score_tokens(build_lut(np.ones(4), build_codebook(K, codes)), codes)
        assert scores[0] == scores[1]

    def test_op_count_contract(self):
        rng = np.random.default_rng(2)
        K = rng.standard_normal((40, 16))
        codes = encode_keys(K)
        lut = build_lut(rng.standard_normal(16), build_codebook(K, codes))
        with collect() as ops:
            score_tokens(lut, codes)
        assert ops.lut_lookups == 40 * 4
        assert ops.lut_adds == 40 * 3
        assert ops.score_muls == 0

    def test_group_mismatch_rejected(self):
        codes = encode_keys(np.ones((2, 8)))
        lut = build_lut(np.ones(4), _singleton_codebook())
        with pytest.raises(ValueError, match="groups"):
            score_tokens(lut, codes)


class TestSignLut:
    def test_sign_lut_scores_sign_dot(self):
        rng = np.random.default_rng(3)
        K = rng.standard_normal((20, 8))
        codes = encode_keys(K)
        q = rng.standard_normal(8)
        scores = score_tokens(build_sign_lut(q, 2), codes)
        np.testing.assert_allclose(scores, np.where(K >= 0, 1.0, -1.0) @ q)


class TestDenseScores:
    def test_matches_matmul_and_counts(self):
        rng = np.random.default_rng(4)
        K = rng.standard_normal((30, 8))
        q = rng.standard_normal(8)
        with collect() as ops:
            scores = dense_scores(q, K)
        np.testing.assert_allclose(scores, K @ q)
        assert ops.dense_muls == 30 * 8
        assert ops.dense_adds == 30 * 7


class TestTopKSelect:
    def test_argmax_pair(self):
        sel = top_k_select([0.1, 5.0, 3.0, 2.0], k=2)
        np.testing.assert_array_equal(sel.indices, [1, 2])
        assert (sel.sink_count, sel.recent_count, sel.dynamic_count) == (0, 0, 2)

    def test_forced_sink(self):
        sel = top_k_select([0.1, 5.0, 3.0, 2.0], k=2, sink={0})
        np.testing.assert_array_equal(sel.indices, [0, 1, 2])
        assert sel.sink_count == 1 and sel.dynamic_count == 2

    def test_tie_breaks_to_lower_index(self):
        sel = top_k_select([1.0, 1.0, 0.0], k=1)
        np.testing.assert_array_equal(sel.indices, [0])

    def test_sink_recent_overlap_counts_once(self):
        sel = top_k_select([1.0, 2.0, 3.0, 4.0], k=1, sink={0, 1}, recent={1, 2})
        np.testing.assert_array_equal(sel.indices, [0, 1, 2, 3])
        assert (sel.sink_count, sel.recent_count, sel.dynamic_count) == (2, 1, 1)

    def test_k_clamps_to_remaining(self):
        sel = top_k_select([3.0, 1.0, 2.0], k=10, sink={0})
        np.testing.assert_array_equal(sel.indices, [0, 1, 2])
        assert sel.dynamic_count == 2

    def test_k_zero_keeps_only_forced(self):
        sel = top_k_select([3.0, 1.0, 2.0], k=0, recent={2})
        np.testing.assert_array_equal(sel.indices, [2])

    def test_score_shift_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.standard_normal(50)
        base = top_k_select(scores, k=7, sink={1, 2})
        shifted = top_k_select(scores + 123.456, k=7, sink={1, 2})
        np.testing.assert_array_equal(base.indices, shifted.indices)

    def test_monotonicity(self):
        rng = np.random.default_rng(6)
        scores = rng.standard_normal(40)
        k = 10
        for boost in (0.5, 2.0, 10.0):
            for idx in (0, 17, 39):
                before = idx in top_k_select(scores, k).indices
                bumped = scores.copy()
                bumped[idx] += boost
                after = idx in top_k_select(bumped, k).indices
                assert after >= before  # raising a score never ejects the token

    def test_out_of_range_forced_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            top_k_select([1.0, 2.0], k=1, sink={5})
        with pytest.raises(ValueError, match="out of range"):
            top_k_select([1.0, 2.0], k=1, recent={-1})

    def test_negative_k_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            top_k_select([1.0], k=-1)


class TestResolveDynamicK:
    def test_budget_subtracts_forced(self):
        assert resolve_dynamic_k(4096, 64, budget=160) == 96

    def test_budget_floor_zero(self):
        assert resolve_dynamic_k(4096, 64, budget=10) == 0

    def test_sparsity_rounds_to_nearest(self):
        assert resolve_dynamic_k(4096, 0, sparsity=0.075) == 307  # 307.2 rounds down
        assert resolve_dynamic_k(1000, 0, sparsity=0.0755) == 76  # 75.5 rounds up

    def test_sparsity_floor_one(self):
        assert resolve_dynamic_k(1000, 64, sparsity=0.01) == 1

    def test_exactly_one_mode(self):
        with pytest.raises(ValueError, match="exactly one"):
            resolve_dynamic_k(100, 0)
        with pytest.raises(ValueError, match="exactly one"):
            resolve_dynamic_k(100, 0, budget=10, sparsity=0.5)
