"""Separable bicubic resampling with the Catmull-Rom kernel (a = -0.5).

Output samples are placed on half-pixel centers: source coordinate of output
index o is (o + 0.5) / scale - 0.5. Taps falling outside the image clamp to
the nearest edge sample, so kernel weight is never lost and a constant image
stays constant at any scale. Resampling is a fixed linear map, so the
gradient is its transpose; weight matrices are cached per (in, out) size.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ShapeError

_matrix_cache = {}


def _cubic(t):
    """Catmull-Rom cubic, support (-2, 2), a = -0.5."""
    at = abs(t)
    if at <= 1.0:
        return (1.5 * at - 2.5) * at * at + 1.0
    if at < 2.0:
        return ((-0.5 * at + 2.5) * at - 4.0) * at + 2.0
    return 0.0


def resize_matrix(n_in, n_out):
    """Dense (n_out, n_in) resampling matrix in float64, rows summing to 1."""
    key = (n_in, n_out)
    cached = _matrix_cache.get(key)
    if cached is not None:
        return cached
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    ratio = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * ratio - 0.5
        base = int(np.floor(src))
        frac = src - base
        for t in range(-1, 3):
            idx = min(max(base + t, 0), n_in - 1)
            mat[o, idx] += _cubic(t - frac)
    mat /= mat.sum(axis=1, keepdims=True)
    _matrix_cache[key] = mat
    return mat


def output_size(size, scale):
    out = int(round(size * float(scale)))
    return max(out, 1)


def resize_array(x, scale):
    """Resample a plain ndarray of shape (..., h, w). No gradient tracking."""
    scale = Fraction(scale).limit_denominator(1 << 20) if not isinstance(scale, Fraction) else scale
    if scale <= 0:
        raise ConfigurationError(f"resize scale must be positive, got {scale}")
    x = np.asarray(x)
    if x.ndim < 2:
        raise ShapeError(f"resize expects at least 2 dims, got shape {x.shape}")
    h, w = x.shape[-2:]
    oh, ow = output_size(h, scale), output_size(w, scale)
    if (oh, ow) == (h, w):
        return np.array(x, copy=True)
    wr = resize_matrix(h, oh).astype(x.dtype, copy=False)
    wc = resize_matrix(w, ow).astype(x.dtype, copy=False)
    return np.matmul(np.matmul(wr, x), wc.T)


def resize_bicubic(x, scale):
    """Differentiable bicubic resize of a (n, c, h, w) tensor by a positive
    rational factor. scale 1 is the identity."""
    xd = ad._data(x)
    if xd.ndim != 4:
        raise ShapeError(f"resize_bicubic expects 4D input, got {xd.shape}")
    frac = Fraction(scale).limit_denominator(1 << 20) if not isinstance(scale, Fraction) else scale
    if frac <= 0:
        raise ConfigurationError(f"resize scale must be positive, got {scale}")
    h, w = xd.shape[-2:]
    oh, ow = output_size(h, frac), output_size(w, frac)
    if (oh, ow) == (h, w):
        out = ad.Tensor(np.array(xd, copy=True))

        def bwd_id(g):
            return (g,)

        return ad._record("resize_bicubic", (ad._maybe(x),), out, bwd_id)

    wr = resize_matrix(h, oh).astype(xd.dtype, copy=False)
    wc = resize_matrix(w, ow).astype(xd.dtype, copy=False)
    out = ad.Tensor(np.matmul(np.matmul(wr, xd), wc.T))

    def bwd(g):
        return (np.matmul(np.matmul(wr.T, g), wc),)

    return ad._record("resize_bicubic", (ad._maybe(x),), out, bwd)
