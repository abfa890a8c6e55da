"""Training objective and evaluation metrics.

The composite objective is a weighted sum of two branch losses, each an L1
term plus a weighted SSIM term. Default weights: 0.3 for the image branch,
0.7 for the wavelet branch, and 0.2 for each SSIM sub-weight. L1 is the plain
mean absolute difference over all elements. SSIM uses the canonical 11x11
Gaussian window (sigma 1.5) with C1 = 0.01^2 and C2 = 0.03^2 on unit dynamic
range, valid windows only, averaged over space and channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

PSNR_INF = math.inf


@dataclass
class LossWeights:
    """Branch and sub-term weights of the composite objective."""

    sr: float = 0.3        # weight of the image-branch loss
    wt: float = 0.7        # weight of the wavelet-branch loss
    ssim_sr: float = 0.2   # SSIM sub-weight inside the image-branch loss
    ssim_wt: float = 0.2   # SSIM sub-weight inside the wavelet-branch loss
    wr_aux: float = 0.1    # optional feature-matching weight for the WR stack

    def validate(self):
        for name in ("sr", "wt", "ssim_sr", "ssim_wt", "wr_aux"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"loss weight {name} must be >= 0")

    def to_dict(self):
        return {k: float(getattr(self, k)) for k in ("sr", "wt", "ssim_sr", "ssim_wt", "wr_aux")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


def _pair(a, b, op):
    ad_, bd = ad._data(a), ad._data(b)
    if ad_.shape != bd.shape:
        raise ShapeError(f"{op}: shapes differ: {ad_.shape} vs {bd.shape}")
    return ad_, bd


def l1_loss(a, b):
    """Mean absolute difference over every element."""
    _pair(a, b, "l1_loss")
    return ad.tmean(ad.absolute(ad.sub(a, b)))


def mse_loss(a, b):
    _pair(a, b, "mse_loss")
    d = ad.sub(a, b)
    return ad.tmean(ad.mul(d, d))


_window_cache = {}


def _gaussian_1d():
    half = (SSIM_WINDOW - 1) / 2.0
    axis = np.arange(SSIM_WINDOW, dtype=np.float64) - half
    g = np.exp(-(axis ** 2) / (2.0 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _ssim_window(dtype):
    """The separable halves of the normalized 11x11 Gaussian window."""
    key = np.dtype(dtype).str
    if key not in _window_cache:
        g = _gaussian_1d()
        _window_cache[key] = (
            g.reshape(1, 1, SSIM_WINDOW, 1),
            g.reshape(1, 1, 1, SSIM_WINDOW),
        )
    col, row = _window_cache[key]
    return col.astype(dtype, copy=False), row.astype(dtype, copy=False)


def ssim(a, b):
    """Mean local SSIM over valid 11x11 windows, channels, and batch.

    Expects images on unit dynamic range; ssim(x, x) == 1. Differentiable.
    """
    ad_, bd = _pair(a, b, "ssim")
    if ad_.ndim != 4:
        raise ShapeError(f"ssim expects 4D images, got {ad_.shape}")
    n, c, h, w = ad_.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ConfigurationError(
            f"ssim needs spatial dims >= {SSIM_WINDOW}, got {h}x{w}"
        )
    win_col, win_row = _ssim_window(ad_.dtype)

    def blur(t):
        flat = ad.reshape(t, (n * c, 1, h, w))
        return ad.conv2d(ad.conv2d(flat, win_col), win_row)

    mu_a = blur(a)
    mu_b = blur(b)
    mu_aa = ad.mul(mu_a, mu_a)
    mu_bb = ad.mul(mu_b, mu_b)
    mu_ab = ad.mul(mu_a, mu_b)
    var_a = ad.sub(blur(ad.mul(a, a)), mu_aa)
    var_b = ad.sub(blur(ad.mul(b, b)), mu_bb)
    cov = ad.sub(blur(ad.mul(a, b)), mu_ab)

    num = ad.mul(ad.add(ad.mul(mu_ab, 2.0), SSIM_C1), ad.add(ad.mul(cov, 2.0), SSIM_C2))
    den = ad.mul(ad.add(ad.add(mu_aa, mu_bb), SSIM_C1), ad.add(ad.add(var_a, var_b), SSIM_C2))
    return ad.tmean(ad.div(num, den))


def ssim_loss(a, b):
    """1 - ssim(a, b); lies in [0, 2] since SSIM is bounded by [-1, 1]."""
    return ad.sub(1.0, ssim(a, b))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB on unit range; infinity when equal."""
    ad_, bd = _pair(a, b, "psnr")
    diff = ad_.astype(np.float64) - bd.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def composite_loss(i_hr, i_gt, i_wt, wt_target, weights: LossWeights,
                   wr_feat=None, wr_target=None, use_mse=False):
    """Weighted two-branch objective.

    Returns (total, parts): `total` is the scalar loss tensor, `parts` a
    breakdown of plain floats whose weighted recomposition equals the total.
    The wavelet branch is skipped when `i_wt` is None (image-only model); the
    auxiliary WR feature-matching term is added only when both `wr_feat` and
    `wr_target` are given.
    """
    weights.validate()
    pixel = mse_loss if use_mse else l1_loss

    sr_pix = pixel(i_hr, i_gt)
    sr_ssim = ssim_loss(i_hr, i_gt) if weights.ssim_sr else None
    l_sr = sr_pix if sr_ssim is None else ad.add(sr_pix, ad.mul(sr_ssim, weights.ssim_sr))

    parts = {
        "sr": float(l_sr.item()),
        "sr_pixel": float(sr_pix.item()),
        "sr_ssim": float(sr_ssim.item()) if sr_ssim is not None else 0.0,
        "wt": 0.0,
        "wt_pixel": 0.0,
        "wt_ssim": 0.0,
        "wr_aux": 0.0,
    }

    total = ad.mul(l_sr, weights.sr)
    if i_wt is not None:
        wt_pix = pixel(i_wt, wt_target)
        wt_ssim = ssim_loss(i_wt, wt_target) if weights.ssim_wt else None
        l_wt = wt_pix if wt_ssim is None else ad.add(wt_pix, ad.mul(wt_ssim, weights.ssim_wt))
        parts["wt"] = float(l_wt.item())
        parts["wt_pixel"] = float(wt_pix.item())
        parts["wt_ssim"] = float(wt_ssim.item()) if wt_ssim is not None else 0.0
        total = ad.add(total, ad.mul(l_wt, weights.wt))
    if wr_feat is not None and wr_target is not None and weights.wr_aux:
        aux = l1_loss(wr_feat, wr_target)
        parts["wr_aux"] = float(aux.item())
        total = ad.add(total, ad.mul(aux, weights.wr_aux))

    parts["total"] = float(total.item())
    return total, parts


def recompose(parts, weights: LossWeights):
    """Reassemble the total from the logged breakdown (float64 arithmetic)."""
    return (
        weights.sr * parts["sr"]
        + weights.wt * parts["wt"]
        + weights.wr_aux * parts.get("wr_aux", 0.0)
    )
