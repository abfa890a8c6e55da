"""Single-level 2D Haar analysis and synthesis.

The network consumes only the diagonal high-frequency (HH) subband, produced
by the stride-2 stencil 0.5 * [[1, -1], [-1, 1]]. The full four-subband
transform and its inverse exist for verification: with the 0.5 normalization
the pair is orthonormal, so synthesis(analysis(x)) == x and energy is
conserved across subbands.

Inputs must have even spatial dims; odd sizes are rejected rather than
padded (the data pipeline guarantees even patches).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

# private hook used by the gradient-check CLI to prove the checker catches a
# corrupted backward rule; leave at 1.0 for correct behavior
_hh_adjoint_gain = 1.0


@dataclass
class Subbands:
    """The four half-resolution Haar subbands of an even-sized image."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray


def _check_even(shape, op):
    h, w = shape[-2:]
    if h % 2 or w % 2:
        raise ShapeError(
            f"{op} requires even spatial dims, got {h}x{w}; crop the input to an even size"
        )


def _blocks(x):
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return a, b, c, d


def hh_forward(x):
    """HH coefficients of a plain ndarray (..., h, w), h and w even."""
    x = np.asarray(x)
    _check_even(x.shape, "dwt_hh")
    a, b, c, d = _blocks(x)
    return 0.5 * (a - b - c + d)


def hh_adjoint(g, shape):
    """Transpose of the HH stencil: scatter +-0.5 * g back onto the grid."""
    out = np.zeros(shape, dtype=g.dtype)
    half = 0.5 * _hh_adjoint_gain
    out[..., 0::2, 0::2] = half * g
    out[..., 0::2, 1::2] = -half * g
    out[..., 1::2, 0::2] = -half * g
    out[..., 1::2, 1::2] = half * g
    return out


def dwt_hh(x):
    """Differentiable HH subband of a (n, c, h, w) tensor, output (n, c, h/2, w/2)."""
    xd = ad._data(x)
    if xd.ndim != 4:
        raise ShapeError(f"dwt_hh expects 4D input, got {xd.shape}")
    out = ad.Tensor(hh_forward(xd))

    def bwd(g):
        return (hh_adjoint(g, xd.shape),)

    return ad._record("dwt_hh", (ad._maybe(x),), out, bwd)


def dwt_full(x):
    """Full single-level analysis of an ndarray (..., h, w) into Subbands."""
    x = np.asarray(x)
    _check_even(x.shape, "dwt_full")
    a, b, c, d = _blocks(x)
    ll = 0.5 * (a + b + c + d)
    lh = 0.5 * (a - b + c - d)
    hl = 0.5 * (a + b - c - d)
    hh = 0.5 * (a - b - c + d)
    return Subbands(ll=ll, lh=lh, hl=hl, hh=hh)


def idwt_full(s):
    """Inverse of :func:`dwt_full`; exact up to float rounding."""
    ll, lh, hl, hh = s.ll, s.lh, s.hl, s.hh
    if not (ll.shape == lh.shape == hl.shape == hh.shape):
        raise ShapeError(
            f"idwt_full: subband shapes differ: {ll.shape}, {lh.shape}, {hl.shape}, {hh.shape}"
        )
    out_shape = ll.shape[:-2] + (ll.shape[-2] * 2, ll.shape[-1] * 2)
    out = np.empty(out_shape, dtype=ll.dtype)
    out[..., 0::2, 0::2] = 0.5 * (ll + lh + hl + hh)
    out[..., 0::2, 1::2] = 0.5 * (ll - lh + hl - hh)
    out[..., 1::2, 0::2] = 0.5 * (ll + lh - hl - hh)
    out[..., 1::2, 1::2] = 0.5 * (ll - lh - hl + hh)
    return out
