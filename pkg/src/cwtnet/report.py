"""Rendering of evaluation reports: comparison grids and training curves.

Figures are written next to the delimited metric output so every report
directory is self-contained. The comparison grid shows LR, the bicubic
baseline, the network output, and the ground truth side by side.
"""

from __future__ import annotations

import csv
import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _to_display(img):
    """(3, h, w) float in [0, 1] -> (h, w, 3) clipped for imshow."""
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0).transpose(1, 2, 0)


def save_comparison_grid(out_png, lr, bicubic, sr, gt, metrics=None, title=None):
    """One row of LR | bicubic | network | ground truth panels."""
    panels = [
        ("LR input", lr, None),
        ("bicubic", bicubic, (metrics or {}).get("bicubic")),
        ("network", sr, (metrics or {}).get("network")),
        ("ground truth", gt, None),
    ]
    fig, axes = plt.subplots(1, 4, figsize=(10.5, 3.0))
    for ax, (label, img, m) in zip(axes, panels):
        ax.imshow(_to_display(img), interpolation="nearest")
        caption = label
        if m is not None:
            p = m.get("psnr_db")
            p_txt = "inf" if p is not None and math.isinf(p) else (f"{p:.2f}" if p is not None else "?")
            caption = f"{label}\n{p_txt} dB / {m.get('ssim', float('nan')):.4f}"
        ax.set_title(caption, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png


def save_training_curve(csv_path, out_png):
    """Loss components and PSNR against the step counter."""
    steps, total, sr_loss, wt_loss, psnr_db = [], [], [], [], []
    with open(csv_path) as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            total.append(float(row["L"]))
            sr_loss.append(float(row["L_SR"]))
            wt_loss.append(float(row["L_WT"]))
            psnr_db.append(float(row["psnr_db"]))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.2))
    ax1.plot(steps, total, label="total", lw=1.2)
    ax1.plot(steps, sr_loss, label="image branch", lw=0.9, alpha=0.8)
    ax1.plot(steps, wt_loss, label="wavelet branch", lw=0.9, alpha=0.8)
    ax1.set_xlabel("step")
    ax1.set_ylabel("loss")
    ax1.set_yscale("log")
    ax1.legend(fontsize=7)
    finite = [p for p in psnr_db if math.isfinite(p)]
    ax2.plot(steps, [p if math.isfinite(p) else None for p in psnr_db], lw=1.0)
    ax2.set_xlabel("step")
    ax2.set_ylabel("train PSNR (dB)")
    if finite:
        ax2.set_ylim(min(finite) - 1, max(finite) + 1)
    for ax in (ax1, ax2):
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    fig.tight_layout()
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    return out_png
