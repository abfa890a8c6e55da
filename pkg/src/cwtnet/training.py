"""Run configuration and the deterministic training loop.

A run is reproducible from (RunConfig, seed) alone: batch membership and
augmentation for step k are drawn from a counter-based generator keyed by
(seed, k), so resuming from a checkpoint at any step continues bit-for-bit
as if the run had never stopped. One training process owns its output
directory through a lockfile; metric rows are appended to `metrics.csv` as
`step, L, L_SR, L_WT, psnr_db, ssim`.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .checkpoint import load_checkpoint, save_checkpoint
from .data import augment, load_patch_dir, sample_triple, synth_pyramid
from .errors import ConfigurationError, DataError, NumericError
from .losses import LossWeights, composite_loss, psnr, ssim
from .network import CWTNet, Mode, NetworkConfig
from .optim import Adam
from .wavelet import hh_forward

_STREAM_BATCH = 0xB0
_STREAM_AUG = 0xA0

CSV_HEADER = "step,L,L_SR,L_WT,psnr_db,ssim"

LOSS_STRATEGIES = ("ours", "only-l1", "only-mse")
OPT_STRATEGIES = ("ours", "only-sr", "only-wt", "weight-exchange")


@dataclass
class DataSource:
    """Either an on-disk patch directory or an in-memory synthetic corpus."""

    directory: str | None = None
    synthetic_seed: int = 7
    synthetic_count: int = 4
    base_size: int = 256

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    data: DataSource = field(default_factory=DataSource)
    steps: int = 300
    batch_size: int = 4
    eval_every: int = 100
    patch: int = 32
    augment: bool = True
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_schedule: str = "constant"   # "constant" or "cosine"
    lr_warmup: int = 0
    lr_floor: float = 0.0
    loss_strategy: str = "ours"
    opt_strategy: str = "ours"

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if isinstance(self.data, dict):
            self.data = DataSource.from_dict(self.data)

    def validate(self):
        self.network.validate()
        self.weights.validate()
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch % 2:
            raise ConfigurationError(f"patch must be even, got {self.patch}")
        if self.eval_every < 1:
            raise ConfigurationError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(
                f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}"
            )
        if self.loss_strategy not in LOSS_STRATEGIES:
            raise ConfigurationError(
                f"loss strategy must be one of {LOSS_STRATEGIES}, got {self.loss_strategy!r}"
            )
        if self.opt_strategy not in OPT_STRATEGIES:
            raise ConfigurationError(
                f"optimization strategy must be one of {OPT_STRATEGIES}, got {self.opt_strategy!r}"
            )

    def to_dict(self):
        d = asdict(self)
        d["network"] = self.network.to_dict()
        d["weights"] = self.weights.to_dict()
        d["data"] = self.data.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def effective_weights(self):
        """Loss weights after applying the optimization strategy."""
        w = self.weights
        if self.opt_strategy == "only-sr":
            return replace(w, wt=0.0)
        if self.opt_strategy == "only-wt":
            return replace(w, sr=0.0)
        if self.opt_strategy == "weight-exchange":
            return replace(w, sr=w.wt, wt=w.sr)
        return w

    def lr_at(self, step):
        """Learning rate for a 1-based step; a pure function of the step, so
        resumed runs see the identical schedule."""
        if self.lr_warmup and step <= self.lr_warmup:
            return self.lr * step / self.lr_warmup
        if self.lr_schedule == "constant":
            return self.lr
        span = max(self.steps - self.lr_warmup, 1)
        progress = min((step - self.lr_warmup) / span, 1.0)
        return self.lr_floor + 0.5 * (self.lr - self.lr_floor) * (1.0 + math.cos(math.pi * progress))


def preset(name):
    """Named defaults: `desk` is small enough for CPU smoke runs, `paper`
    mirrors the full-size architecture."""
    if name == "desk":
        return RunConfig(
            network=NetworkConfig(scale=2, cwtb_count=2, channels=16, seed=0),
            steps=300,
            batch_size=4,
            patch=32,
            augment=False,
            lr=5e-3,
            beta2=0.99,
            eval_every=100,
        )
    if name == "paper":
        return RunConfig(
            network=NetworkConfig(scale=2, cwtb_count=12, channels=64, seed=0),
            steps=1000,
            batch_size=16,
            patch=64,
            augment=True,
            lr=1e-4,
            eval_every=100,
        )
    raise ConfigurationError(f"unknown preset {name!r}; available: desk, paper")


def build_training_set(cfg: RunConfig):
    """Materialize the training triples for a run configuration."""
    if cfg.data.directory:
        triples, manifest = load_patch_dir(cfg.data.directory, split="train")
        if int(manifest["scale"]) != cfg.network.scale:
            raise DataError(
                f"dataset scale {manifest['scale']} does not match network scale "
                f"{cfg.network.scale}"
            )
        if int(manifest["patch"]) != cfg.patch:
            raise DataError(
                f"dataset patch {manifest['patch']} does not match configured patch {cfg.patch}"
            )
        return triples
    triples = []
    for i in range(cfg.data.synthetic_count):
        pyr = synth_pyramid(cfg.data.synthetic_seed + 1000 * i, base_size=cfg.data.base_size)
        rng = ad.make_rng(cfg.data.synthetic_seed, 0x53, i)
        triples.append(sample_triple(pyr, cfg.network.scale, cfg.patch, rng))
    return triples


def _stack_batch(cfg: RunConfig, triples, step):
    pick_rng = ad.make_rng(cfg.seed, _STREAM_BATCH, step)
    count = len(triples)
    replacement = count < cfg.batch_size
    idx = pick_rng.choice(count, size=cfg.batch_size, replace=replacement)
    batch = []
    for slot, i in enumerate(idx):
        t = triples[int(i)]
        if cfg.augment:
            t = augment(t, ad.make_rng(cfg.seed, _STREAM_AUG, step, slot))
        batch.append(t)
    gt = np.stack([t.gt for t in batch])
    gtp = np.stack([t.gt_prime for t in batch])
    lr = np.stack([t.lr for t in batch])
    return gt, gtp, lr


def training_step(net: CWTNet, optimizer: Adam, cfg: RunConfig, weights, gt, gtp, lr):
    """One forward/backward/update. Returns (parts, i_hr data)."""
    mode = net.config.mode
    with ad.Tape() as tape:
        if mode == Mode.CROSS_SCALE:
            out = net.forward(lr, gtp)
        else:
            out = net.forward(lr, mode=mode)
        wt_target = hh_forward(gtp) if out.i_wt is not None else None
        total, parts = composite_loss(
            out.i_hr, gt, out.i_wt, wt_target, weights,
            wr_feat=out.wr_feat, wr_target=out.wr_target,
            use_mse=(cfg.loss_strategy == "only-mse"),
        )
    if not math.isfinite(parts["total"]):
        raise NumericError(f"non-finite loss at step {optimizer.t + 1}: {parts['total']}")
    net.params.zero_grad()
    tape.backward(total)
    optimizer.step()
    return parts, out.i_hr.data


class _Lock:
    def __init__(self, out_dir):
        self.path = os.path.join(out_dir, "train.lock")

    def __enter__(self):
        if os.path.exists(self.path):
            raise DataError(
                f"output directory is owned by another training process: {self.path}"
            )
        with open(self.path, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, exc_type, exc, tb):
        if os.path.exists(self.path):
            os.remove(self.path)
        return False


def train(cfg: RunConfig | None, out_dir, resume_from=None, quiet=True):
    """Run (or resume) training; returns a summary dict.

    Resuming restores the run configuration embedded in the checkpoint (the
    passed `cfg` may then be None). Writes `metrics.csv`, periodic
    `step_XXXXXX.ckpt` files, a final `final.ckpt`, and `training_curve.png`
    under `out_dir`.
    """
    start_step = 0
    opt_state = None
    param_arrays = None
    if resume_from is not None:
        config_dict, param_arrays, opt_state, start_step = load_checkpoint(resume_from)
        cfg = RunConfig.from_dict(config_dict)
    elif cfg is None:
        raise ConfigurationError("train requires a RunConfig when not resuming")
    cfg.validate()
    if cfg.loss_strategy in ("only-l1", "only-mse"):
        cfg.weights = replace(cfg.weights, ssim_sr=0.0, ssim_wt=0.0)
    weights = cfg.effective_weights()

    os.makedirs(out_dir, exist_ok=True)
    triples = build_training_set(cfg)
    net = CWTNet(cfg.network)
    optimizer = Adam(net.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    if param_arrays is not None:
        net.params.load_arrays(param_arrays)
    if opt_state is not None:
        optimizer.load_state_dict(opt_state)

    csv_path = os.path.join(out_dir, "metrics.csv")
    last = {}
    with _Lock(out_dir):
        fresh_csv = start_step == 0 or not os.path.exists(csv_path)
        with open(csv_path, "w" if fresh_csv else "a") as csv:
            if fresh_csv:
                csv.write(CSV_HEADER + "\n")
            for step in range(start_step + 1, cfg.steps + 1):
                gt, gtp, lr = _stack_batch(cfg, triples, step)
                optimizer.lr = cfg.lr_at(step)
                parts, hr = training_step(net, optimizer, cfg, weights, gt, gtp, lr)
                hr_clipped = np.clip(hr, 0.0, 1.0)
                step_psnr = psnr(hr_clipped, gt)
                step_ssim = float(ssim(hr_clipped, gt).item())
                last = {
                    "step": step,
                    "L": parts["total"],
                    "L_SR": parts["sr"],
                    "L_WT": parts["wt"],
                    "psnr_db": step_psnr,
                    "ssim": step_ssim,
                }
                csv.write(
                    f"{step},{parts['total']:.6f},{parts['sr']:.6f},{parts['wt']:.6f},"
                    f"{step_psnr:.4f},{step_ssim:.6f}\n"
                )
                if not quiet and (step % 25 == 0 or step == 1):
                    print(
                        f"step {step:6d}  L={parts['total']:.4f}  "
                        f"psnr={step_psnr:.2f}dB  ssim={step_ssim:.4f}"
                    )
                if step % cfg.eval_every == 0 or step == cfg.steps:
                    save_checkpoint(
                        os.path.join(out_dir, f"step_{step:06d}.ckpt"),
                        cfg.to_dict(), net.params, optimizer.state_dict(), step,
                    )
        final_path = os.path.join(out_dir, "final.ckpt")
        save_checkpoint(final_path, cfg.to_dict(), net.params,
                        optimizer.state_dict(), cfg.steps)

    from .report import save_training_curve

    curve_path = os.path.join(out_dir, "training_curve.png")
    save_training_curve(csv_path, curve_path)
    return {
        "final_checkpoint": final_path,
        "metrics_csv": csv_path,
        "curve_png": curve_path,
        "last": last,
        "net": net,
        "triples": triples,
        "config": cfg,
    }


def load_network(ckpt_path):
    """Rebuild a network (and its RunConfig) from a checkpoint."""
    config_dict, param_arrays, _opt, step = load_checkpoint(ckpt_path)
    cfg = RunConfig.from_dict(config_dict)
    net = CWTNet(cfg.network)
    net.params.load_arrays(param_arrays)
    return net, cfg, step
