"""Synthetic multi-level image pyramids and aligned patch triples.

A training sample is a triple (gt, gt_prime, lr) cut around one shared
center: `gt` is the full-resolution target, `gt_prime` the same region one
sampling level above the LR input (always 2p x 2p, so its HH subband is
p x p), and `lr` the bicubic degradation of `gt` by the task scale. Levels
are counted as magnification steps above the LR input, so the ordering
lv_gt >= lv_gt_prime >= lv_lr always holds, with equality of the first two
exactly at scale 2 (where gt_prime is gt itself).

The synthetic generator paints a cell-like texture: elliptical bodies with
thin dark membranes over a smooth background, on a palette steered toward
per-channel means (0.7204, 0.4298, 0.6379). Pyramid levels are built by 2x2
area averaging (a stand-in for optical downsampling); a flag switches to
bicubic-derived levels for corpora whose pyramids are generated that way.

On disk a dataset is `<root>/<split>/<id>/gt.png|gtp.png|lr.png` plus a
`manifest.json` recording scale, patch size, levels, and palette means.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .autodiff import make_rng
from .errors import ConfigurationError, DataError
from .resample import resize_array

_STREAM_SYNTH = 0x5A
_STREAM_SPLIT = 0x51
_STREAM_SAMPLE = 0x53

MANIFEST_NAME = "manifest.json"
MEMBER_FILES = {"gt": "gt.png", "gt_prime": "gtp.png", "lr": "lr.png"}


@dataclass
class Pyramid:
    """Image pyramid: level k holds the scene at 1/2^k of the base resolution."""

    levels: list
    microns_per_pixel: float = 0.25

    def level(self, k):
        return self.levels[k]

    @property
    def depth(self):
        return len(self.levels)

    def microns_at(self, k):
        return self.microns_per_pixel * (2 ** k)


@dataclass
class PatchTriple:
    gt: np.ndarray        # (3, p*s, p*s)
    gt_prime: np.ndarray  # (3, 2p, 2p)
    lr: np.ndarray        # (3, p, p)
    levels: tuple         # (lv_gt, lv_gt_prime, lv_lr), magnification steps above LR
    center: tuple         # (row, col) at base resolution
    scale: int
    patch: int

    def validate(self):
        s, p = self.scale, self.patch
        lv_gt, lv_gtp, lv_lr = self.levels
        if not (lv_gt >= lv_gtp >= lv_lr):
            raise DataError(f"level ordering violated: {self.levels}")
        if self.gt.shape != (3, p * s, p * s):
            raise DataError(f"gt shape {self.gt.shape} does not match patch {p} scale {s}")
        if self.gt_prime.shape != (3, 2 * p, 2 * p):
            raise DataError(f"gt_prime shape {self.gt_prime.shape} is not (3, {2*p}, {2*p})")
        if self.lr.shape != (3, p, p):
            raise DataError(f"lr shape {self.lr.shape} is not (3, {p}, {p})")


# ---------------------------------------------------------------------------
# Synthetic pyramid


def _paint_cells(rng, size, means):
    """Elliptical bodies with dark membrane rings over a smooth background."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.empty((3, size, size), dtype=np.float64)

    # low-frequency background around the palette means
    for ch in range(3):
        field = np.full((size, size), means[ch] + 0.035, dtype=np.float64)
        for _ in range(3):
            fy = rng.uniform(0.5, 2.0) * 2 * math.pi / size
            fx = rng.uniform(0.5, 2.0) * 2 * math.pi / size
            phase = rng.uniform(0, 2 * math.pi)
            field += 0.02 * np.cos(fy * yy + fx * xx + phase)
        img[ch] = field

    n_cells = max(6, (size * size) // 1100)
    body = np.array([0.52, 0.27, 0.52])
    membrane = np.array([0.30, 0.12, 0.33])
    for _ in range(n_cells):
        cy = rng.uniform(0, size)
        cx = rng.uniform(0, size)
        a = rng.uniform(4.0, 11.0) * size / 256.0
        b = rng.uniform(4.0, 11.0) * size / 256.0
        theta = rng.uniform(0, math.pi)
        ct, st = math.cos(theta), math.sin(theta)
        # bounding box keeps the per-cell work local
        r = int(max(a, b) * 1.6) + 2
        y0, y1 = max(0, int(cy) - r), min(size, int(cy) + r + 1)
        x0, x1 = max(0, int(cx) - r), min(size, int(cx) + r + 1)
        if y0 >= y1 or x0 >= x1:
            continue
        ys = yy[y0:y1, x0:x1] - cy
        xs = xx[y0:y1, x0:x1] - cx
        u = (ct * xs + st * ys) / a
        v = (-st * xs + ct * ys) / b
        d = np.sqrt(u * u + v * v)
        inside = np.clip((1.0 - d) / 0.08, 0.0, 1.0)          # soft fill mask
        ring = np.clip(1.0 - np.abs(d - 1.0) / 0.10, 0.0, 1.0)  # thin membrane
        jitter = rng.uniform(0.9, 1.1)
        for ch in range(3):
            tile = img[ch, y0:y1, x0:x1]
            tile *= (1.0 - 0.85 * inside)
            tile += 0.85 * inside * body[ch] * jitter
            tile *= (1.0 - 0.95 * ring)
            tile += 0.95 * ring * membrane[ch]
    return np.clip(img, 0.0, 1.0)


def area_halve(img):
    """Exact 2x2 block mean of a (c, h, w) image (h, w even)."""
    c, h, w = img.shape
    x = img.astype(np.float64).reshape(c, h // 2, 2, w // 2, 2)
    return x.mean(axis=(2, 4)).astype(img.dtype)


def synth_pyramid(seed, base_size=256, n_levels=4, means=(0.7204, 0.4298, 0.6379),
                  bicubic_levels=False):
    """Deterministic synthetic pyramid; the same seed yields identical bits."""
    if base_size % 8:
        raise ConfigurationError(f"base_size must be divisible by 8, got {base_size}")
    if base_size < 2 ** (n_levels - 1):
        raise ConfigurationError(
            f"base_size {base_size} too small for {n_levels} levels"
        )
    rng = make_rng(seed, _STREAM_SYNTH)
    base = _paint_cells(rng, base_size, means).astype(np.float32)
    levels = [base]
    for _ in range(n_levels - 1):
        if bicubic_levels:
            nxt = np.clip(resize_array(levels[-1], 0.5), 0.0, 1.0).astype(np.float32)
        else:
            nxt = area_halve(levels[-1])
        levels.append(nxt)
    return Pyramid(levels=levels)


# ---------------------------------------------------------------------------
# Triple sampling and augmentation


def sample_triple(pyr: Pyramid, scale, patch, rng, max_retries=16):
    """Cut one aligned triple about a shared center.

    gt comes from the base level, gt_prime from the level one magnification
    step above LR (index log2(scale) - 1), and lr is the bicubic degradation
    of gt by 1/scale.
    """
    if patch % 2:
        raise ConfigurationError(f"patch size must be even, got {patch}")
    lv_gap = int(math.log2(scale))
    if 2 ** lv_gap != scale:
        raise ConfigurationError(f"scale must be a power of two, got {scale}")
    gtp_level = lv_gap - 1
    if pyr.depth <= gtp_level:
        raise ConfigurationError(
            f"pyramid depth {pyr.depth} too shallow for scale {scale}"
        )
    window = patch * scale
    base_size = pyr.level(0).shape[-1]
    align = 2 ** gtp_level if gtp_level > 0 else 1
    span = base_size - window
    if span < 0:
        raise DataError(
            f"window {window} exceeds pyramid base size {base_size}"
        )
    for _ in range(max_retries):
        y0 = int(rng.integers(0, span // align + 1)) * align
        x0 = int(rng.integers(0, span // align + 1)) * align
        if y0 + window <= base_size and x0 + window <= base_size:
            break
    else:
        raise DataError("could not place a sampling window inside the pyramid")

    gt = np.array(pyr.level(0)[:, y0:y0 + window, x0:x0 + window])
    lv = pyr.level(gtp_level)
    yg, xg = y0 // align, x0 // align
    gt_prime = np.array(lv[:, yg:yg + 2 * patch, xg:xg + 2 * patch])
    lr = resize_array(gt, 1.0 / scale).astype(np.float32)
    triple = PatchTriple(
        gt=gt,
        gt_prime=gt_prime,
        lr=np.clip(lr, 0.0, 1.0),
        levels=(lv_gap, 1, 0),
        center=(y0 + window // 2, x0 + window // 2),
        scale=scale,
        patch=patch,
    )
    triple.validate()
    return triple


def augment(triple: PatchTriple, rng):
    """One of the four 90-degree rotations, applied identically to all members."""
    k = int(rng.integers(0, 4))
    return rotate_triple(triple, k)


def rotate_triple(triple: PatchTriple, k):
    if k % 4 == 0:
        return triple
    rot = lambda img: np.ascontiguousarray(np.rot90(img, k, axes=(1, 2)))
    return PatchTriple(
        gt=rot(triple.gt),
        gt_prime=rot(triple.gt_prime),
        lr=rot(triple.lr),
        levels=triple.levels,
        center=triple.center,
        scale=triple.scale,
        patch=triple.patch,
    )


def train_test_split(count, seed):
    """Deterministic 5:1 split: a pure function of (count, seed)."""
    if count < 1:
        raise ConfigurationError(f"dataset size must be >= 1, got {count}")
    order = make_rng(seed, _STREAM_SPLIT).permutation(count)
    n_test = count // 6
    test = sorted(int(i) for i in order[:n_test])
    train = sorted(int(i) for i in order[n_test:])
    return train, test


# ---------------------------------------------------------------------------
# PNG round trip


def _to_png(img):
    q = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    return Image.fromarray(q.transpose(1, 2, 0))


def _from_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_triple(triple: PatchTriple, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    _to_png(triple.gt).save(os.path.join(dirpath, MEMBER_FILES["gt"]))
    _to_png(triple.gt_prime).save(os.path.join(dirpath, MEMBER_FILES["gt_prime"]))
    _to_png(triple.lr).save(os.path.join(dirpath, MEMBER_FILES["lr"]))


def load_triple(dirpath, scale, patch, require_gt_prime=True):
    members = {}
    for key, fname in MEMBER_FILES.items():
        path = os.path.join(dirpath, fname)
        if not os.path.exists(path):
            if key == "gt_prime" and not require_gt_prime:
                members[key] = None
                continue
            raise DataError(f"triple member missing: {path}")
        members[key] = _from_png(path)

    gt, gtp, lr = members["gt"], members["gt_prime"], members["lr"]
    if gt.shape[-1] != patch * scale or lr.shape[-1] != patch:
        raise DataError(
            f"{dirpath}: sizes gt {gt.shape[-1]} / lr {lr.shape[-1]} do not match "
            f"manifest scale {scale} and patch {patch}"
        )
    if gtp is None:
        gtp = np.zeros((3, 2 * patch, 2 * patch), dtype=np.float32)
    lv_gap = int(math.log2(scale))
    triple = PatchTriple(
        gt=gt, gt_prime=gtp, lr=lr,
        levels=(lv_gap, 1, 0),
        center=(gt.shape[-2] // 2, gt.shape[-1] // 2),
        scale=scale, patch=patch,
    )
    triple.validate()
    return triple


def write_manifest(root, scale, patch, means, counts):
    manifest = {
        "scale": int(scale),
        "patch": int(patch),
        "levels": {"gt": int(math.log2(scale)), "gt_prime": 1, "lr": 0},
        "rgb_means": [float(m) for m in means],
        "counts": {k: int(v) for k, v in counts.items()},
    }
    with open(os.path.join(root, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(root):
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"manifest missing: {path}")
    with open(path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest unreadable: {path}: {exc}") from exc
    for key in ("scale", "patch"):
        if key not in manifest:
            raise DataError(f"manifest {path} lacks required key {key!r}")
    return manifest


def synthesize_dataset(out_dir, seed, count, scale, patch, base_size=256,
                       means=(0.7204, 0.4298, 0.6379), bicubic_levels=False):
    """Generate `count` triples, split 5:1, and write the directory layout."""
    if count < 1:
        raise ConfigurationError(f"count must be >= 1, got {count}")
    train_ids, test_ids = train_test_split(count, seed)
    os.makedirs(out_dir, exist_ok=True)
    triples = []
    for i in range(count):
        pyr = synth_pyramid(seed + 1000 * i, base_size=base_size, means=means,
                            bicubic_levels=bicubic_levels)
        rng = make_rng(seed, _STREAM_SAMPLE, i)
        triples.append(sample_triple(pyr, scale, patch, rng))
    for split, ids in (("train", train_ids), ("test", test_ids)):
        for i in ids:
            save_triple(triples[i], os.path.join(out_dir, split, f"{i:04d}"))
    write_manifest(out_dir, scale, patch, means,
                   {"train": len(train_ids), "test": len(test_ids)})
    return train_ids, test_ids


def load_patch_dir(root, split="train", require_gt_prime=True):
    """Load every triple under `<root>/<split>/`, validated against the manifest."""
    manifest = read_manifest(root)
    scale, patch = int(manifest["scale"]), int(manifest["patch"])
    split_dir = os.path.join(root, split)
    if not os.path.isdir(split_dir):
        raise DataError(f"split directory missing: {split_dir}")
    names = sorted(d for d in os.listdir(split_dir)
                   if os.path.isdir(os.path.join(split_dir, d)))
    if not names:
        raise DataError(f"no triples found under {split_dir}")
    return [
        load_triple(os.path.join(split_dir, name), scale, patch,
                    require_gt_prime=require_gt_prime)
        for name in names
    ], manifest
