"""Reusable network blocks.

Blocks register their weights in a shared :class:`Parameters` store under
hierarchical names and hold Tensor references; forward passes are read-only
with respect to parameters. Initialization draws from a generator derived
from (seed, layer name), so a layer's initial weights do not depend on which
other layers exist in the model.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ShapeError


@dataclass
class BlockConfig:
    """Architectural constants shared by the blocks of one network.

    `rb_per_wt_block` and `wrb_count` follow the scale-dependent depth rule
    (see :func:`cwtnet.network.depth_for_scale`); the attention reduction is
    8 rather than the conventional 16 to widen the weighting range.
    """

    channels: int = 64
    kernel: int = 3
    ca_reduction: int = 8
    rb_per_sr_block: int = 2
    rb_per_wt_block: int = 2
    wrb_count: int = 4

    def validate(self):
        if self.channels < 1:
            raise ConfigurationError(f"channels must be positive, got {self.channels}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"block kernel must be odd and positive, got {self.kernel}")
        if self.ca_reduction < 1 or self.channels % self.ca_reduction:
            raise ConfigurationError(
                f"channels ({self.channels}) must be divisible by the attention "
                f"reduction ({self.ca_reduction})"
            )
        for field in ("rb_per_sr_block", "rb_per_wt_block", "wrb_count"):
            if getattr(self, field) < 1:
                raise ConfigurationError(f"{field} must be >= 1, got {getattr(self, field)}")


def layer_rng(seed, name):
    """Deterministic per-layer generator keyed by the layer's path name."""
    return ad.make_rng(seed, zlib.crc32(name.encode()))


def kaiming_uniform(rng, shape, dtype=np.float32):
    fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv:
    """A conv2d layer owning a weight and bias entry in the parameter store."""

    def __init__(self, params, name, c_in, c_out, k, seed, stride=1, padding=None,
                 init="kaiming"):
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        rng = layer_rng(seed, name)
        if init == "kaiming":
            w = kaiming_uniform(rng, (c_out, c_in, k, k))
        elif init == "std_normal":
            w = rng.standard_normal((c_out, c_in, k, k)).astype(np.float32)
        else:
            raise ConfigurationError(f"unknown init {init!r}")
        self.weight = params.add(f"{name}.weight", w)
        self.bias = params.add(f"{name}.bias", np.zeros(c_out, dtype=np.float32))

    def __call__(self, x):
        return ad.conv2d(x, self.weight, self.bias, self.stride, self.padding)


def mean_shift(x, means, sign):
    """Subtract (sign -1) or restore (sign +1) fixed per-channel means."""
    if sign not in (-1, 1):
        raise ConfigurationError(f"mean_shift sign must be -1 or +1, got {sign}")
    xd = ad._data(x)
    m = np.asarray(means, dtype=xd.dtype)
    if xd.ndim != 4 or m.ndim != 1 or xd.shape[1] != m.shape[0]:
        raise ShapeError(
            f"mean_shift: input shape {xd.shape} does not carry {m.shape[0]} channels"
        )
    shift = (sign * m).reshape(1, -1, 1, 1)
    return ad.add(x, shift)


class ResidualBlock:
    """x + conv(relu(conv(x))), shape preserving, no normalization layers."""

    def __init__(self, params, name, channels, k, seed):
        self.conv1 = Conv(params, f"{name}.conv1", channels, channels, k, seed)
        self.conv2 = Conv(params, f"{name}.conv2", channels, channels, k, seed)

    def __call__(self, x):
        return ad.add(x, self.conv2(ad.relu(self.conv1(x))))


class ResidualStack:
    def __init__(self, params, name, channels, k, count, seed):
        self.blocks = [
            ResidualBlock(params, f"{name}.rb{i}", channels, k, seed) for i in range(count)
        ]

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return x


class ChannelAttention:
    """Squeeze-excite gating: per-channel factors in (0, 1) from the pooled
    descriptor, squeezed by `reduction` and restored by a second 1x1 conv."""

    def __init__(self, params, name, channels, reduction, seed):
        if channels % reduction:
            raise ConfigurationError(
                f"channel_attention: {channels} channels not divisible by reduction {reduction}"
            )
        squeezed = channels // reduction
        self.down = Conv(params, f"{name}.down", channels, squeezed, 1, seed, padding=0)
        self.up = Conv(params, f"{name}.up", squeezed, channels, 1, seed, padding=0)

    def factors(self, x):
        return ad.sigmoid(self.up(ad.relu(self.down(ad.avg_pool_global(x)))))

    def __call__(self, x):
        return ad.mul(x, self.factors(x))


class WRB:
    """Wavelet-reconstruction block: conv, relu, conv, channel attention,
    residual add. Deeper and wider gating than a plain residual block."""

    def __init__(self, params, name, channels, k, reduction, seed):
        self.conv1 = Conv(params, f"{name}.conv1", channels, channels, k, seed)
        self.conv2 = Conv(params, f"{name}.conv2", channels, channels, k, seed)
        self.attention = ChannelAttention(params, f"{name}.ca", channels, reduction, seed)

    def __call__(self, x):
        return ad.add(x, self.attention(self.conv2(ad.relu(self.conv1(x)))))


class WRModule:
    """Stack of WRBs plus one closing conv. Synthesizes wavelet-like features
    from LR-derived shallow features when no cross-scale image is available;
    output keeps the LR spatial size so it matches the transform path."""

    def __init__(self, params, name, cfg: BlockConfig, seed, std_normal=False):
        init = "std_normal" if std_normal else "kaiming"
        self.blocks = []
        for i in range(cfg.wrb_count):
            blk = WRB(params, f"{name}.wrb{i}", cfg.channels, cfg.kernel, cfg.ca_reduction, seed)
            self.blocks.append(blk)
        self.tail = Conv(params, f"{name}.tail", cfg.channels, cfg.channels, cfg.kernel, seed,
                         init=init)
        if std_normal:
            # test-only behavior: every WR weight drawn from N(0, 1)
            self._reinit_std_normal(seed, name)

    def _reinit_std_normal(self, seed, name):
        for i, blk in enumerate(self.blocks):
            for tag, conv in (
                ("conv1", blk.conv1),
                ("conv2", blk.conv2),
                ("down", blk.attention.down),
                ("up", blk.attention.up),
            ):
                rng = layer_rng(seed, f"{name}.wrb{i}.{tag}.std_normal")
                conv.weight.data = rng.standard_normal(conv.weight.shape).astype(np.float32)

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.tail(x)


class Upsampler:
    """log2(scale) stages of [conv to 4c channels, depth-to-space x2], then a
    conv down to 3 image channels.

    The closing conv starts at a tenth of its Kaiming magnitude so the
    freshly built network emits images near the restored channel means
    instead of a large random field; short training budgets otherwise spend
    their first hundred steps undoing the initial output scale.
    """

    SUPPORTED = (2, 4, 8)
    TAIL_INIT_DAMP = 0.1

    def __init__(self, params, name, channels, scale, seed, k=3):
        if scale not in self.SUPPORTED:
            raise ConfigurationError(f"upsampler scale must be one of {self.SUPPORTED}, got {scale}")
        self.scale = scale
        self.stages = []
        n_stages = int(np.log2(scale))
        for i in range(n_stages):
            self.stages.append(Conv(params, f"{name}.stage{i}", channels, 4 * channels, k, seed))
        self.tail = Conv(params, f"{name}.tail", channels, 3, k, seed)
        self.tail.weight.data *= self.TAIL_INIT_DAMP

    def __call__(self, x):
        for conv in self.stages:
            x = ad.pixel_shuffle(conv(x), 2)
        return self.tail(x)
