"""Group-wise quantization contracts: grids, degenerate groups, error bounds."""

import numpy as np
import pytest

from sikv import (
    QuantConfig,
    SignCodeMatrix,
    dequantize_keys,
    dequantize_values,
    encode_keys,
    quantize_key_magnitudes,
    quantize_values,
)
from sikv.bitpack import pack_rows, unpack_rows
from sikv.instrument import collect


class TestBitPack:
    @pytest.mark.parametrize("bits", [1, 2, 4, 8])
    def test_roundtrip(self, bits):
        rng = np.random.default_rng(bits)
        codes = rng.integers(0, 1 << bits, size=(50, 64)).astype(np.uint8)
        np.testing.assert_array_equal(unpack_rows(pack_rows(codes, bits), bits, 64), codes)

    def test_low_index_in_low_bits(self):
        # 2-bit layout: byte = c0 | c1<<2 | c2<<4 | c3<<6
        packed = pack_rows(np.array([[1, 0, 3, 2]]), bits=2)
        assert packed.tolist() == [[1 | (3 << 4) | (2 << 6)]]
        packed4 = pack_rows(np.array([[0xA, 0x5]]), bits=4)
        assert packed4.tolist() == [[0x5A]]

    def test_row_padding(self):
        packed = pack_rows(np.array([[1, 1, 1]]), bits=2)
        assert packed.shape == (1, 1)
        np.testing.assert_array_equal(unpack_rows(packed, 2, 3), [[1, 1, 1]])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            pack_rows(np.array([[4]]), bits=2)

    def test_bad_bits_rejected(self):
        with pytest.raises(ValueError, match="bits"):
            pack_rows(np.array([[0]]), bits=3)


class TestQuantizeValues:
    def test_grid_aligned_group(self):
        q = quantize_values([[0.0, 1.0, 2.0, 3.0]], QuantConfig(bits=2, group_size=4))
        assert q.scales.tolist() == [[1.0]]
        assert q.zeros.tolist() == [[0.0]]
        np.testing.assert_array_equal(q.codes(), [[0, 1, 2, 3]])

    def test_constant_group_is_degenerate(self):
        q = quantize_values([[5.0, 5.0, 5.0, 5.0]], QuantConfig(bits=2, group_size=4))
        assert q.scales.tolist() == [[0.0]]
        assert q.zeros.tolist() == [[5.0]]
        np.testing.assert_array_equal(q.codes(), [[0, 0, 0, 0]])
        np.testing.assert_array_equal(dequantize_values(q), [[5.0, 5.0, 5.0, 5.0]])

    def test_rounding(self):
        q = quantize_values([[0.0, 0.4, 2.6, 3.0]], QuantConfig(bits=2, group_size=4))
        np.testing.assert_array_equal(q.codes(), [[0, 0, 3, 3]])
        out = dequantize_values(q)
        np.testing.assert_array_equal(out, [[0.0, 0.0, 3.0, 3.0]])
        err = np.abs(out - [0.0, 0.4, 2.6, 3.0]).max()
        assert err == pytest.approx(0.4)
        assert err <= float(q.scales[0, 0]) / 2

    def test_half_rounds_away_from_zero(self):
        # 1.5 on a unit grid must code to 2, not banker's 2-ish behavior on 0.5
        q = quantize_values([[0.0, 0.5, 1.5, 3.0]], QuantConfig(bits=2, group_size=4))
        np.testing.assert_array_equal(q.codes(), [[0, 1, 2, 3]])

    def test_exact_grid_dequantizes_exactly(self):
        np.testing.assert_array_equal(
            dequantize_values(quantize_values([[0.0, 1.0, 2.0, 3.0]], QuantConfig(2, 4))),
            [[0.0, 1.0, 2.0, 3.0]],
        )

    @pytest.mark.parametrize("bits", [1, 2, 4, 8])
    def test_error_bound_random(self, bits):
        rng = np.random.default_rng(bits + 10)
        V = rng.standard_normal((200, 64)) * 3.0
        cfg = QuantConfig(bits=bits, group_size=32)
        q = quantize_values(V, cfg)
        out = dequantize_values(q)
        qs = np.repeat(q.scales.astype(np.float64), cfg.group_size, axis=1)
        zp = np.repeat(np.abs(q.zeros.astype(np.float64)), cfg.group_size, axis=1)
        spread = qs * cfg.levels
        # half a stored step, plus float16 parameter narrowing slack
        tol = 0.5 * qs + 2.0 ** -10 * (zp + spread) + 1e-12
        assert (np.abs(out - V) <= tol).all()

    def test_idempotent_on_grid_points(self):
        rng = np.random.default_rng(42)
        cfg = QuantConfig(bits=2, group_size=8)
        codes = rng.integers(0, 4, size=(50, 32))
        codes[:, ::8] = 0   # pin group min
        codes[:, 7::8] = 3  # pin group max
        V = 0.5 * codes + 2.0  # exactly representable grid
        q1 = quantize_values(V, cfg)
        q2 = quantize_values(dequantize_values(q1), cfg)
        np.testing.assert_array_equal(q1.codes(), q2.codes())
        np.testing.assert_array_equal(dequantize_values(q1), V)

    def test_bit_cost_accounting(self):
        q = quantize_values(np.zeros((7, 128)), QuantConfig(bits=2, group_size=32))
        assert q.code_bits == 2 * 7 * 128
        assert q.param_bits == 2 * 16 * 7 * 4

    def test_row_subset_access(self):
        rng = np.random.default_rng(11)
        V = rng.standard_normal((30, 8))
        q = quantize_values(V, QuantConfig(bits=4, group_size=4))
        full = dequantize_values(q)
        np.testing.assert_array_equal(dequantize_values(q, rows=[5, 20]), full[[5, 20]])

    def test_empty_row_subset(self):
        q = quantize_values(np.zeros((4, 8)), QuantConfig(bits=2, group_size=4))
        out = dequantize_values(q, rows=np.array([], dtype=np.int64))
        assert out.shape == (0, 8)

    def test_dequant_row_counter(self):
        q = quantize_values(np.zeros((30, 8)), QuantConfig(bits=2, group_size=4))
        with collect() as ops:
            dequantize_values(q, rows=[1, 2, 3])
        assert ops.dequant_rows == 3

    def test_non_finite_rejected(self):
        bad = np.zeros((2, 4))
        bad[0, 0] = np.inf
        with pytest.raises(ValueError, match="non-finite"):
            quantize_values(bad, QuantConfig(2, 4))

    def test_indivisible_group_rejected(self):
        with pytest.raises(ValueError, match="group_size"):
            quantize_values(np.zeros((2, 6)), QuantConfig(2, 4))


class TestKeyMagnitudes:
    def test_full_scale_column(self):
        K = np.array([[-1.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0]])
        alpha = np.ones(4)
        q = quantize_key_magnitudes(K, alpha, QuantConfig(bits=2, group_size=4))
        # |K|/alpha is constant 1: degenerate group, zero-point carries it
        np.testing.assert_array_equal(dequantize_values(q), np.ones((2, 4)))

    def test_zero_channel(self):
        K = np.zeros((3, 4))
        q = quantize_key_magnitudes(K, np.zeros(4), QuantConfig(bits=2, group_size=4))
        np.testing.assert_array_equal(dequantize_values(q), np.zeros((3, 4)))

    def test_exact_recompose_degenerate(self):
        K = np.array([[0.5, -0.25, 1.0, -1.0]])
        alpha = np.array([0.5, 0.25, 1.0, 1.0])
        cfg = QuantConfig(bits=2, group_size=4)
        q = quantize_key_magnitudes(K, alpha, cfg)
        assert q.scales.tolist() == [[0.0]]
        assert q.zeros.tolist() == [[1.0]]
        out = dequantize_keys(q, alpha, encode_keys(K))
        np.testing.assert_array_equal(out, K)

    def test_normalized_entries_in_unit_interval(self):
        rng = np.random.default_rng(12)
        K = rng.standard_normal((100, 16)) * 5
        K -= K.mean(axis=0)
        alpha = np.abs(K).max(axis=0)
        q = quantize_key_magnitudes(K, alpha, QuantConfig(bits=8, group_size=16))
        assert q.codes().max() <= 255

    def test_alpha_must_dominate(self):
        K = np.full((2, 4), 3.0)
        with pytest.raises(ValueError, match="dominate"):
            quantize_key_magnitudes(K, np.ones(4), QuantConfig(2, 4))


class TestDequantizeKeys:
    def test_zero_keys_reconstruct_zero(self):
        K = np.zeros((4, 8))
        alpha = np.zeros(8)
        q = quantize_key_magnitudes(K, alpha, QuantConfig(2, 4))
        out = dequantize_keys(q, alpha, encode_keys(K))
        np.testing.assert_array_equal(out, np.zeros((4, 8)))

    def test_sign_flip_negates_one_element(self):
        rng = np.random.default_rng(13)
        K = rng.standard_normal((6, 8))
        K -= K.mean(axis=0)
        alpha = np.abs(K).max(axis=0)
        cfg = QuantConfig(bits=8, group_size=4)
        q = quantize_key_magnitudes(K, alpha, cfg)
        codes = encode_keys(K)
        base = dequantize_keys(q, alpha, codes)

        raw = codes.unpack().copy()
        raw[2, 1] ^= 0b1000  # flip the sign of element (2, 4): group 1, MSB position
        flipped = dequantize_keys(q, alpha, SignCodeMatrix.from_codes(raw))
        diff = flipped - base
        assert diff[2, 4] == pytest.approx(-2 * base[2, 4])
        diff[2, 4] = 0.0
        np.testing.assert_array_equal(diff, np.zeros_like(diff))

    def test_signs_agree_where_magnitude_nonzero(self):
        rng = np.random.default_rng(14)
        K = rng.standard_normal((128, 32))
        K -= K.mean(axis=0)
        alpha = np.abs(K).max(axis=0)
        q = quantize_key_magnitudes(K, alpha, QuantConfig(bits=2, group_size=32))
        codes = encode_keys(K)
        out = dequantize_keys(q, alpha, codes)
        nonzero = out != 0
        np.testing.assert_array_equal(np.sign(out)[nonzero], codes.sign_plane()[nonzero])

    def test_reconstruction_error_within_scaled_step(self):
        rng = np.random.default_rng(15)
        K = rng.standard_normal((256, 32)) * 2.0
        K -= K.mean(axis=0)
        alpha = np.abs(K).max(axis=0)
        cfg = QuantConfig(bits=4, group_size=32)
        q = quantize_key_magnitudes(K, alpha, cfg)
        out = dequantize_keys(q, alpha, encode_keys(K))
        qs = np.repeat(q.scales.astype(np.float64), cfg.group_size, axis=1)
        zp = np.repeat(np.abs(q.zeros.astype(np.float64)), cfg.group_size, axis=1)
        tol = alpha * (0.5 * qs + 2.0 ** -10 * (zp + qs * cfg.levels) + 1e-12)
        assert (np.abs(out - K) <= tol).all()

    def test_shape_mismatch_rejected(self):
        q = quantize_values(np.zeros((4, 8)), QuantConfig(2, 4))
        signs = encode_keys(np.zeros((5, 8)))
        with pytest.raises(ValueError, match="sign codes"):
            dequantize_keys(q, np.ones(8), signs)
