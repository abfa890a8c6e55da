"""Cross-scale wavelet-transformer super-resolution.

A dual-branch network for multi-level image pyramids: an image branch
upsamples the LR input while a wavelet branch supplies cross-scale
high-frequency structure, fused per block by texture-transfer attention.
Built on a self-contained numpy reverse-mode differentiation core so every
gradient rule is verifiable against finite differences.
"""

from .autodiff import Parameters, Tape, Tensor, backward, make_rng
from .blocks import BlockConfig, mean_shift
from .errors import (
    CheckpointError,
    ConfigurationError,
    CwtNetError,
    DataError,
    NumericError,
    ShapeError,
    UsageError,
)
from .losses import LossWeights, composite_loss, l1_loss, psnr, ssim, ssim_loss
from .network import Ablation, CWTNet, ForwardOutputs, Mode, NetworkConfig, depth_for_scale
from .training import RunConfig, preset, train
from .wavelet import Subbands, dwt_full, dwt_hh, idwt_full

__version__ = "0.1.0"
