"""Cross-branch texture-transfer attention.

Features from the two branches are unfolded into 3x3 patches (stride 1,
padding 1, so there is one patch per pixel). Super-resolution features act as
queries, wavelet features as keys, and a smoothed (up- then downsampled)
copy of the wavelet features as values. Relevance between query i and key j
is the cosine of the unit-normalized patches. Hard attention picks, for each
query, the single most relevant value patch (smallest index wins ties); soft
attention keeps the winning relevance as a spatial gate.

The index map is non-differentiable; gradients flow through the query path,
the transferred values, and the soft gate only. The full L x L relevance
matrix is materialized only by :func:`relevance` (and by tests); the network
path scans it in row blocks and recomputes the winning relevances as plain
gathered dot products, so its memory stays linear in L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .blocks import Conv
from .errors import ShapeError
from .resample import resize_bicubic

PATCH_K = 3
PATCH_STRIDE = 1
PATCH_PAD = 1


@dataclass
class AttentionOutputs:
    """Hard index map, soft relevance map, and the transferred feature."""

    h_index: np.ndarray  # (n, L) int64, winning value-patch per query
    s_map: ad.Tensor     # (n, 1, h, w), winning relevance in [-1, 1]
    t_feat: ad.Tensor    # same shape as the query feature, assembled from V


def relevance(q_patches, k_patches):
    """Full relevance matrix r of shape (n, L, L): r[b, i, j] is the cosine of
    query patch i and key patch j. Zero-norm patches relate 0 to everything."""
    qd, kd = ad._data(q_patches), ad._data(k_patches)
    if qd.shape != kd.shape:
        raise ShapeError(f"relevance: query patches {qd.shape} vs key patches {kd.shape}")
    qn = ad.normalize_patches(q_patches)
    kn = ad.normalize_patches(k_patches)
    n, d, _, length = qd.shape
    qm = ad.reshape(qn, (n, d, length))
    km = ad.reshape(kn, (n, d, length))
    return ad.matmul(_transpose12(qm), km)


def _transpose12(t):
    td = ad._data(t)
    out = ad.Tensor(np.ascontiguousarray(td.transpose(0, 2, 1)))

    def bwd(g):
        return (np.ascontiguousarray(g.transpose(0, 2, 1)),)

    return ad._record("transpose12", (ad._maybe(t),), out, bwd)


def hard_soft_attention(r):
    """Argmax scan of a relevance matrix.

    Returns (h_index, s_values): h_index[b, i] is the smallest j maximizing
    r[b, i, j]; s_values[b, i] is that maximal relevance. Plain arrays, no
    gradient tracking.
    """
    rd = ad._data(r)
    if rd.ndim != 3:
        raise ShapeError(f"hard_soft_attention expects (n, L, L) relevance, got {rd.shape}")
    h_index = rd.argmax(axis=2)
    s_values = np.take_along_axis(rd, h_index[:, :, None], axis=2)[:, :, 0]
    return h_index, s_values


def hard_attention_scan(qn, kn, row_block=256):
    """Blockwise argmax of the cosine matrix without materializing it.

    qn, kn: normalized columns (n, d, L) as plain arrays. The result is
    independent of `row_block` because each row is still scored against every
    key at once.
    """
    n, d, length = qn.shape
    h_index = np.empty((n, length), dtype=np.int64)
    for b in range(n):
        q_t = qn[b].T  # (L, d)
        for lo in range(0, length, row_block):
            hi = min(lo + row_block, length)
            rows = q_t[lo:hi] @ kn[b]  # (block, L)
            h_index[b, lo:hi] = rows.argmax(axis=1)
    return h_index


def transfer(v, h_index, k=PATCH_K, stride=PATCH_STRIDE, padding=PATCH_PAD):
    """Assemble the transferred feature: unfold V, gather the winning patches,
    fold back with overlap averaging. Same shape as V.

    V is padded by edge replication before unfolding, so every gathered patch
    stays inside V's value range (a constant V transfers as a constant no
    matter which indices win). The fold geometry is unchanged, which keeps
    the identity gather an exact reconstruction.
    """
    vd = ad._data(v)
    if vd.ndim != 4:
        raise ShapeError(f"transfer expects a 4D value feature, got {vd.shape}")
    h, w = vd.shape[2], vd.shape[3]
    cols = ad.unfold(ad.pad_edge(v, padding), k, stride, 0) if padding else ad.unfold(v, k, stride, 0)
    picked = ad.gather_cols(cols, h_index)
    return ad.fold(picked, (h, w), k, stride, padding)


def fuse(q, t_feat, s_map, conv):
    """q + conv(concat(q, t)) * s_map; the gate broadcasts over channels."""
    qd, td = ad._data(q), ad._data(t_feat)
    if qd.shape != td.shape:
        raise ShapeError(f"fuse: query {qd.shape} vs transferred feature {td.shape}")
    mixed = conv(ad.concat([q, t_feat], axis=1))
    return ad.add(q, ad.mul(mixed, s_map))


class TextureTransformer:
    """The fusion block of one CWTB.

    Callable on (query feature, key feature); the value feature is the key
    feature smoothed by a bicubic up-down round trip (factor 2). Returns the
    fused feature and the attention byproducts.
    """

    def __init__(self, params, name, channels, seed, row_block=256):
        self.fusion = Conv(params, f"{name}.fusion", 2 * channels, channels, 3, seed)
        self.row_block = row_block

    def __call__(self, q_feat, k_feat):
        qd, kd = ad._data(q_feat), ad._data(k_feat)
        if qd.shape != kd.shape:
            raise ShapeError(
                f"texture transformer: query feature {qd.shape} vs key feature {kd.shape}"
            )
        n, c, h, w = qd.shape
        v_feat = resize_bicubic(resize_bicubic(k_feat, 2), 0.5)

        q_cols = ad.unfold(q_feat, PATCH_K, PATCH_STRIDE, PATCH_PAD)
        k_cols = ad.unfold(k_feat, PATCH_K, PATCH_STRIDE, PATCH_PAD)
        qn = ad.normalize_patches(q_cols)
        kn = ad.normalize_patches(k_cols)

        length = h * w
        h_index = hard_attention_scan(
            qn.data.reshape(n, -1, length), kn.data.reshape(n, -1, length), self.row_block
        )

        # winning relevances, recomputed differentiably as gathered dots
        kn_sel = ad.gather_cols(kn, h_index)
        s_vals = ad.clip(ad.tsum(ad.mul(qn, kn_sel), axis=1, keepdims=True), -1.0, 1.0)
        s_map = ad.reshape(s_vals, (n, 1, h, w))

        t_feat = transfer(v_feat, h_index)
        fused = fuse(q_feat, t_feat, s_map, self.fusion)
        return fused, AttentionOutputs(h_index=h_index, s_map=s_map, t_feat=t_feat)
