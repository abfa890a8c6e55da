"""Texture-transfer attention against brute-force oracles."""

import numpy as np
import pytest

from cwtnet import autodiff as ad
from cwtnet.attention import (
    AttentionOutputs,
    TextureTransformer,
    fuse,
    hard_attention_scan,
    hard_soft_attention,
    relevance,
    transfer,
)
from cwtnet.blocks import Conv
from cwtnet.resample import resize_array
from cwtnet.verify import check_attention_fuse


def naive_relevance(q_cols, k_cols):
    """O(L^2) cosine table by explicit python loops."""
    n, d, _, length = q_cols.shape
    r = np.zeros((n, length, length))
    for b in range(n):
        for i in range(length):
            qi = q_cols[b, :, 0, i].astype(np.float64)
            nq = np.linalg.norm(qi)
            for j in range(length):
                kj = k_cols[b, :, 0, j].astype(np.float64)
                nk = np.linalg.norm(kj)
                if nq > 0 and nk > 0:
                    r[b, i, j] = float(qi @ kj) / (nq * nk)
    return r


def naive_hard_soft(r):
    n, length, _ = r.shape
    h = np.zeros((n, length), dtype=np.int64)
    s = np.zeros((n, length))
    for b in range(n):
        for i in range(length):
            best, best_j = -np.inf, 0
            for j in range(length):
                if r[b, i, j] > best:
                    best, best_j = r[b, i, j], j
            h[b, i] = best_j
            s[b, i] = best
    return h, s


def unfold_np(x, k=3, pad=1):
    xt = ad.unfold(x, k, 1, pad)
    return xt.data


def unfold_edge_np(x, k=3, pad=1):
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    return ad.unfold(padded, k, 1, 0).data


class TestRelevance:
    def test_identical_patch_cosine_one(self):
        rng = ad.make_rng(0)
        cols = rng.standard_normal((1, 6, 1, 4))
        r = relevance(cols, cols.copy()).data
        for i in range(4):
            assert r[0, i, i] == pytest.approx(1.0, abs=1e-6)

    def test_orthogonal_patches_zero(self):
        q = np.zeros((1, 2, 1, 1))
        k = np.zeros((1, 2, 1, 1))
        q[0, 0, 0, 0] = 3.0
        k[0, 1, 0, 0] = 5.0
        assert relevance(q, k).data[0, 0, 0] == pytest.approx(0.0, abs=1e-7)

    def test_scale_invariance_of_keys(self):
        rng = ad.make_rng(1)
        q = rng.standard_normal((1, 6, 1, 5))
        k = rng.standard_normal((1, 6, 1, 5))
        base = relevance(q, k).data
        for alpha in (0.25, 2.0, 7.5):
            np.testing.assert_allclose(relevance(q, alpha * k).data, base, atol=1e-6)

    def test_zero_norm_patch_relates_zero(self):
        rng = ad.make_rng(2)
        q = rng.standard_normal((1, 4, 1, 3))
        k = rng.standard_normal((1, 4, 1, 3))
        k[0, :, 0, 1] = 0.0
        r = relevance(q, k).data
        np.testing.assert_array_equal(r[0, :, 1], 0.0)

    def test_matches_naive_table(self):
        rng = ad.make_rng(3)
        q = rng.standard_normal((2, 5, 1, 7))
        k = rng.standard_normal((2, 5, 1, 7))
        np.testing.assert_allclose(relevance(q, k).data, naive_relevance(q, k), atol=1e-6)


class TestHardSoft:
    def test_diagonal_dominant_picks_diagonal(self):
        r = np.full((1, 4, 4), 0.1)
        r[0, range(4), range(4)] = 0.9
        h, s = hard_soft_attention(r)
        np.testing.assert_array_equal(h[0], [0, 1, 2, 3])
        np.testing.assert_allclose(s[0], 0.9)

    def test_all_equal_ties_break_to_zero(self):
        r = np.full((2, 5, 5), 0.3)
        h, _ = hard_soft_attention(r)
        np.testing.assert_array_equal(h, 0)

    def test_matches_bruteforce_on_random_instances(self):
        rng = ad.make_rng(4)
        for trial in range(6):
            q = rng.standard_normal((1, 8, 1, 16))
            k = rng.standard_normal((1, 8, 1, 16))
            r = relevance(q, k).data
            h, s = hard_soft_attention(r)
            hb, sb = naive_hard_soft(r)
            np.testing.assert_array_equal(h, hb)
            np.testing.assert_allclose(s, sb, atol=1e-7)

    def test_blocked_scan_independent_of_block_size(self):
        rng = ad.make_rng(5)
        q = rng.standard_normal((2, 12, 30))
        k = rng.standard_normal((2, 12, 30))
        qn = q / np.linalg.norm(q, axis=1, keepdims=True)
        kn = k / np.linalg.norm(k, axis=1, keepdims=True)
        full = hard_attention_scan(qn, kn, row_block=1000)
        for block in (1, 3, 7, 30):
            np.testing.assert_array_equal(hard_attention_scan(qn, kn, row_block=block), full)


class TestTransfer:
    def test_identity_gather_recovers_value_feature(self):
        rng = ad.make_rng(6)
        v = rng.standard_normal((1, 3, 6, 6)).astype(np.float32)
        idx = np.arange(36)[None]
        out = transfer(v, idx).data
        assert np.abs(out - v).max() < 1e-6

    def test_constant_value_feature(self):
        v = np.full((1, 2, 4, 4), 0.42, dtype=np.float32)
        idx = np.zeros((1, 16), dtype=np.int64)
        np.testing.assert_allclose(transfer(v, idx).data, 0.42, atol=1e-6)

    def test_single_patch_case(self):
        rng = ad.make_rng(7)
        v = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
        idx = np.zeros((1, 1), dtype=np.int64)
        out = transfer(v, idx, k=3, stride=1, padding=0).data
        np.testing.assert_allclose(out, v, atol=1e-6)

    def test_out_of_range_index_aborts(self):
        v = np.zeros((1, 2, 4, 4), dtype=np.float32)
        idx = np.full((1, 16), 99, dtype=np.int64)
        with pytest.raises(AssertionError):
            transfer(v, idx)


class TestFuse:
    def test_zero_gate_returns_query_exactly(self):
        rng = ad.make_rng(8)
        params = ad.Parameters()
        conv = Conv(params, "fuse", 8, 4, 3, seed=0)
        q = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
        t = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
        gate = np.zeros((1, 1, 5, 5), dtype=np.float32)
        np.testing.assert_array_equal(fuse(q, t, gate, conv).data, q)

    def test_zero_conv_returns_query(self):
        rng = ad.make_rng(9)
        params = ad.Parameters()
        conv = Conv(params, "fuse", 8, 4, 3, seed=0)
        conv.weight.data[...] = 0.0
        conv.bias.data[...] = 0.0
        q = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
        t = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
        gate = rng.standard_normal((1, 1, 5, 5)).astype(np.float32)
        np.testing.assert_array_equal(fuse(q, t, gate, conv).data, q)

    def test_gradient_through_full_attention(self):
        rep = check_attention_fuse(n_samples=200)
        assert rep.passed(), rep.summary()


class TestTransformerBlock:
    def _naive_block(self, tf, q_feat, k_feat):
        """Nested-loop recomputation of the whole attention block."""
        v_feat = resize_array(resize_array(k_feat, 2), 0.5)
        q_cols = unfold_np(q_feat)
        k_cols = unfold_np(k_feat)
        v_cols = unfold_edge_np(v_feat)
        r = naive_relevance(q_cols, k_cols)
        h, s = naive_hard_soft(r)
        n, c, hh, ww = q_feat.shape
        length = hh * ww

        # fold gathered patches with explicit coverage averaging
        t_feat = np.zeros((n, c, hh, ww))
        cover = np.zeros((hh, ww))
        pad = 1
        for b in range(n):
            canvas = np.zeros((c, hh + 2 * pad, ww + 2 * pad))
            cov = np.zeros((hh + 2 * pad, ww + 2 * pad))
            for i in range(length):
                iy, ix = divmod(i, ww)
                patch = v_cols[b, :, 0, h[b, i]].reshape(c, 3, 3)
                canvas[:, iy:iy + 3, ix:ix + 3] += patch
                cov[iy:iy + 3, ix:ix + 3] += 1
            t_feat[b] = canvas[:, pad:-pad, pad:-pad] / cov[pad:-pad, pad:-pad]

        s_map = np.clip(s.reshape(n, 1, hh, ww), -1, 1)
        mixed = tf.fusion(np.concatenate([q_feat, t_feat.astype(q_feat.dtype)], axis=1)).data
        return q_feat + mixed * s_map.astype(q_feat.dtype), h, s_map

    def test_full_block_matches_nested_loop_oracle(self):
        rng = ad.make_rng(10)
        params = ad.Parameters()
        tf = TextureTransformer(params, "tf", 4, seed=0)
        for trial in range(3):
            q = rng.standard_normal((1, 4, 8, 8))
            k = rng.standard_normal((1, 4, 8, 8))
            fused, att = tf(q, k)
            expected, h, s_map = self._naive_block(tf, q, k)
            np.testing.assert_array_equal(att.h_index, h)
            np.testing.assert_allclose(att.s_map.data, s_map, atol=1e-5)
            np.testing.assert_allclose(fused.data, expected, atol=1e-5)

    def test_invariant_under_pow2_rescaling_of_keys(self):
        rng = ad.make_rng(11)
        params = ad.Parameters()
        tf = TextureTransformer(params, "tf", 4, seed=1)
        q = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
        k = rng.standard_normal((1, 4, 6, 6)).astype(np.float32)
        _, base = tf(q, k)
        for alpha in (0.25, 4.0):
            _, att = tf(q, (alpha * k).astype(np.float32))
            np.testing.assert_array_equal(att.h_index, base.h_index)
            np.testing.assert_array_equal(att.s_map.data, base.s_map.data)

    def test_batch_permutation_equivariance(self):
        rng = ad.make_rng(12)
        params = ad.Parameters()
        tf = TextureTransformer(params, "tf", 4, seed=2)
        q = rng.standard_normal((3, 4, 6, 6)).astype(np.float32)
        k = rng.standard_normal((3, 4, 6, 6)).astype(np.float32)
        fused, att = tf(q, k)
        perm = np.array([2, 0, 1])
        fused_p, att_p = tf(q[perm], k[perm])
        np.testing.assert_array_equal(fused_p.data, fused.data[perm])
        np.testing.assert_array_equal(att_p.h_index, att.h_index[perm])

    def test_s_map_bounds_and_output_type(self):
        rng = ad.make_rng(13)
        params = ad.Parameters()
        tf = TextureTransformer(params, "tf", 4, seed=3)
        q = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
        k = rng.standard_normal((2, 4, 5, 5)).astype(np.float32)
        fused, att = tf(q, k)
        assert isinstance(att, AttentionOutputs)
        assert att.s_map.data.min() >= -1.0 and att.s_map.data.max() <= 1.0
        assert att.h_index.min() >= 0 and att.h_index.max() < 25
        assert fused.data.shape == q.shape
