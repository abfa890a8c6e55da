"""Assembly of the dual-branch cross-scale wavelet transformer network.

The image branch lifts the LR input into feature space (mean subtraction,
head conv), runs it through a chain of cross-scale wavelet transformer
blocks (CWTBs), adds the shallow feature back over a long skip, upsamples
with subpixel stages, and restores the channel means. The wavelet branch
feeds each CWTB the high-frequency features its fusion block attends to;
where those features come from depends on the operating mode:

* cross_scale  - the HH subband of a provided twice-resolution image,
* wr_test      - synthesized from the LR input by the WR stack (no
                 cross-scale image is read at all),
* sisr         - the LR image itself through the entry conv.

Each CWTB computes s = rb_s(sr), w = rb_w(wt), then fuses
s + [s + conv(concat(s, t)) * gate], so zeroing the fusion conv collapses
the block to s + s. The wavelet branch additionally emits a 3-channel
projection of its final feature for the wavelet-domain loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from . import autodiff as ad
from .attention import TextureTransformer
from .blocks import BlockConfig, Conv, ResidualStack, Upsampler, WRModule, mean_shift
from .errors import ConfigurationError, ShapeError, UsageError
from .resample import resize_bicubic
from .wavelet import dwt_hh

DEFAULT_RGB_MEANS = (0.7204, 0.4298, 0.6379)

_DEPTH_RULE = {2: (2, 4), 4: (3, 6), 8: (4, 8)}


def depth_for_scale(scale):
    """(residual blocks per wavelet-branch block, WRB count) for a scale.

    The base depth at x2 is (2, 4); every doubling of the scale adds one
    residual block and two WRBs.
    """
    try:
        return _DEPTH_RULE[scale]
    except KeyError:
        raise ConfigurationError(
            f"scale must be one of {sorted(_DEPTH_RULE)}, got {scale}"
        ) from None


class Mode(str, Enum):
    CROSS_SCALE = "cross_scale"
    WR_TEST = "wr_test"
    SISR = "sisr"


@dataclass
class Ablation:
    """Component toggles. `sr_only` drops the wavelet branch and the fusion
    blocks entirely; `disable_dwt` feeds the wavelet-branch image straight to
    the entry conv (halving it first if needed); `disable_wr` removes the WR
    stack."""

    sr_only: bool = False
    disable_dwt: bool = False
    disable_wr: bool = False

    def validate(self):
        if self.sr_only and (self.disable_dwt or self.disable_wr):
            raise ConfigurationError(
                "sr_only removes the wavelet branch; combining it with "
                "disable_dwt or disable_wr is contradictory"
            )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: bool(v) for k, v in d.items()})


@dataclass
class NetworkConfig:
    scale: int = 2
    cwtb_count: int = 12
    channels: int = 64
    ca_reduction: int = 8
    rb_per_sr_block: int = 2
    mode: Mode = Mode.CROSS_SCALE
    rgb_means: tuple = DEFAULT_RGB_MEANS
    seed: int = 0
    ablation: Ablation = field(default_factory=Ablation)
    wr_std_normal_init: bool = False
    wr_supervision: bool = False
    attention_row_block: int = 256
    block: BlockConfig | None = None

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = Mode(self.mode)
        if isinstance(self.ablation, dict):
            self.ablation = Ablation.from_dict(self.ablation)
        if isinstance(self.block, dict):
            self.block = BlockConfig(**self.block)
        if self.block is None:
            rb_wt, wrb = depth_for_scale(self.scale)
            self.block = BlockConfig(
                channels=self.channels,
                ca_reduction=self.ca_reduction,
                rb_per_sr_block=self.rb_per_sr_block,
                rb_per_wt_block=rb_wt,
                wrb_count=wrb,
            )

    def validate(self):
        depth_for_scale(self.scale)
        if self.cwtb_count < 1:
            raise ConfigurationError(f"cwtb_count must be >= 1, got {self.cwtb_count}")
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")
        if len(self.rgb_means) != 3:
            raise ConfigurationError("rgb_means must have exactly 3 entries")
        if self.attention_row_block < 1:
            raise ConfigurationError("attention_row_block must be >= 1")
        if self.block.channels != self.channels:
            raise ConfigurationError(
                f"block.channels ({self.block.channels}) disagrees with "
                f"channels ({self.channels})"
            )
        self.block.validate()
        self.ablation.validate()

    def to_dict(self):
        d = asdict(self)
        d["mode"] = self.mode.value
        d["rgb_means"] = [float(v) for v in self.rgb_means]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "rgb_means" in d:
            d["rgb_means"] = tuple(float(v) for v in d["rgb_means"])
        return cls(**d)


@dataclass
class ForwardOutputs:
    """Products of one forward pass."""

    i_hr: ad.Tensor                 # (n, 3, p*scale, p*scale)
    i_wt: ad.Tensor | None          # (n, 3, p, p); None with sr_only
    wr_feat: ad.Tensor | None = None        # WR-path entry feature (aux supervision)
    wr_target: ad.Tensor | None = None      # gradient-stopped transform-path feature


class CWTB:
    """One cross-scale wavelet transformer block."""

    def __init__(self, params, name, cfg: NetworkConfig):
        bc = cfg.block
        self.rb_sr = ResidualStack(params, f"{name}.sr", bc.channels, bc.kernel,
                                   bc.rb_per_sr_block, cfg.seed)
        if cfg.ablation.sr_only:
            self.rb_wt = None
            self.transformer = None
        else:
            self.rb_wt = ResidualStack(params, f"{name}.wt", bc.channels, bc.kernel,
                                       bc.rb_per_wt_block, cfg.seed)
            self.transformer = TextureTransformer(
                params, f"{name}.tf", bc.channels, cfg.seed,
                row_block=cfg.attention_row_block,
            )

    def __call__(self, sr_feat, wt_feat):
        s = self.rb_sr(sr_feat)
        if self.transformer is None:
            return s, None
        w = self.rb_wt(wt_feat)
        fused, _ = self.transformer(s, w)
        return ad.add(s, fused), w


class CWTNet:
    """The full network. Construction registers every parameter the
    configuration calls for; forward never creates parameters, so checkpoints
    are independent of the operating mode used at save time."""

    def __init__(self, config: NetworkConfig):
        config.validate()
        self.config = config
        self.params = ad.Parameters()
        seed = config.seed
        cc = config.channels
        bc = config.block

        self.head = Conv(self.params, "sr.head", 3, cc, bc.kernel, seed)
        self.cwtbs = [CWTB(self.params, f"cwtb{i}", config) for i in range(config.cwtb_count)]
        self.upsampler = Upsampler(self.params, "sr.up", cc, config.scale, seed, k=bc.kernel)

        if not config.ablation.sr_only:
            self.wt_head = Conv(self.params, "wt.head", 3, cc, bc.kernel, seed)
            self.wt_proj = Conv(self.params, "wt.proj", cc, 3, bc.kernel, seed)
            if not config.ablation.disable_wr:
                self.wr_head = Conv(self.params, "wr.head", 3, cc, bc.kernel, seed,
                                    init="std_normal" if config.wr_std_normal_init else "kaiming")
                self.wr_module = WRModule(self.params, "wr.stack", bc, seed,
                                          std_normal=config.wr_std_normal_init)
            else:
                self.wr_head = None
                self.wr_module = None
        else:
            self.wt_head = None
            self.wt_proj = None
            self.wr_head = None
            self.wr_module = None

    # -- wavelet-branch entry features, per mode -----------------------------

    def _wt_entry_cross_scale(self, i_lr, wt_image):
        n, _, p, _ = ad._data(i_lr).shape
        img = ad._data(wt_image)
        if img.ndim != 4 or img.shape[0] != n or img.shape[1] != 3:
            raise ShapeError(
                f"cross-scale input must be (n, 3, 2p, 2p); got {img.shape} for LR batch {n}"
            )
        if self.config.ablation.disable_dwt:
            if img.shape[2] == p and img.shape[3] == p:
                feed = wt_image
            elif img.shape[2] == 2 * p and img.shape[3] == 2 * p:
                feed = resize_bicubic(wt_image, 0.5)
            else:
                raise ShapeError(
                    f"cross-scale input spatial {img.shape[2]}x{img.shape[3]} matches "
                    f"neither {p} nor {2 * p} (LR patch {p})"
                )
            return self.wt_head(feed)
        if img.shape[2] != 2 * p or img.shape[3] != 2 * p:
            raise ShapeError(
                f"cross-scale input spatial {img.shape[2]}x{img.shape[3]} must be twice "
                f"the LR patch ({p} -> {2 * p}) so its HH subband matches the image branch"
            )
        return self.wt_head(dwt_hh(wt_image))

    def _wt_entry_wr(self, i_lr):
        if self.wr_module is None:
            raise ConfigurationError(
                "wr_test mode requires the wavelet reconstruction stack "
                "(disable_wr is set)"
            )
        return self.wr_module(self.wr_head(i_lr))

    # -- forward --------------------------------------------------------------

    def forward(self, i_lr, wt_image=None, mode=None):
        """Run the network.

        i_lr: (n, 3, p, p) tensor or array. wt_image: the cross-scale image
        (n, 3, 2p, 2p), required in cross_scale mode (unless sr_only) and
        rejected in the self-contained modes.
        """
        cfg = self.config
        mode = Mode(mode) if mode is not None else cfg.mode
        lr_d = ad._data(i_lr)
        if lr_d.ndim != 4 or lr_d.shape[1] != 3:
            raise ShapeError(f"LR input must be (n, 3, p, p), got {lr_d.shape}")

        if mode in (Mode.WR_TEST, Mode.SISR) and wt_image is not None:
            raise UsageError(f"{mode.value} mode must not receive a cross-scale image")

        means = np.asarray(cfg.rgb_means, dtype=lr_d.dtype)
        x = mean_shift(i_lr, means, -1)
        f0 = self.head(x)

        wr_feat = None
        wr_target = None
        if cfg.ablation.sr_only:
            wt_feat = None
        elif mode == Mode.CROSS_SCALE:
            if wt_image is None:
                raise UsageError("cross_scale mode requires the cross-scale image")
            wt_feat = self._wt_entry_cross_scale(i_lr, wt_image)
            if cfg.wr_supervision and self.wr_module is not None:
                wr_feat = self._wt_entry_wr(i_lr)
                wr_target = ad.stop_gradient(wt_feat)
        elif mode == Mode.WR_TEST:
            wt_feat = self._wt_entry_wr(i_lr)
        elif mode == Mode.SISR:
            wt_feat = self.wt_head(i_lr)
        else:  # pragma: no cover - Mode is exhaustive
            raise ConfigurationError(f"unknown mode {mode!r}")

        sr_feat = f0
        for blk in self.cwtbs:
            sr_feat, wt_feat = blk(sr_feat, wt_feat)
        sr_feat = ad.add(f0, sr_feat)

        img = self.upsampler(sr_feat)
        i_hr = mean_shift(img, means, +1)
        i_wt = self.wt_proj(wt_feat) if wt_feat is not None else None
        return ForwardOutputs(i_hr=i_hr, i_wt=i_wt, wr_feat=wr_feat, wr_target=wr_target)

    # -- utilities -------------------------------------------------------------

    def parameter_count(self):
        return self.params.total_size()

    def with_ablation(self, ablation: Ablation):
        """A fresh network with the same configuration but different component
        toggles. Shared layers are initialized identically because layer init
        depends only on (seed, layer name)."""
        return CWTNet(replace(self.config, ablation=ablation, block=None))


def ablate(net: CWTNet, ablation: Ablation):
    """Functional form of :meth:`CWTNet.with_ablation`."""
    return net.with_ablation(ablation)


def parameter_count(net: CWTNet):
    return net.parameter_count()
