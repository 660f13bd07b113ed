"""Figures written next to the CSV outputs of the command-line tools."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def training_curve(log, path, title: Optional[str] = None) -> None:
    """Training loss per step with validation P-FM on a twin axis; LR decays as dashed lines."""
    steps = [r["step"] for r in log.rows if r["event"] == "step"]
    losses = log.losses()
    evals = log.evals()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=0.8, color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss", color="tab:blue")
    for r in log.rows:
        if r["event"] == "lr":
            ax.axvline(r["step"], color="gray", ls="--", lw=0.7)
    if evals:
        ax2 = ax.twinx()
        s, v = zip(*evals)
        ax2.plot(s, v, "o-", ms=3, color="tab:orange", label="val P-FM")
        if log.best_step is not None:
            ax2.plot([log.best_step], [log.best_pfm], "*", ms=12, color="tab:red")
        ax2.set_ylabel("validation P-FM", color="tab:orange")
    ax.set_title(title or "training")
    _save(fig, path)


def metric_summary(rows: Sequence[tuple], path) -> None:
    """Per-image P-FM, FM, PSNR and DRD as four small bar charts.

    ``rows`` holds ``(name, MetricReport or None)``.
    """
    good = [(n, r) for n, r in rows if r is not None]
    names = [str(n) for n, _ in good]
    fig, axes = plt.subplots(1, 4, figsize=(12, 3.2))
    x = np.arange(len(good))
    for ax, key, label in zip(axes, ("pfm", "fm", "psnr", "drd"), ("P-FM", "FM", "PSNR (dB)", "DRD")):
        vals = np.array([getattr(r, key) for _, r in good], dtype=float)
        finite = np.where(np.isfinite(vals), vals, np.nan)
        ax.bar(x, np.nan_to_num(finite, nan=0.0), color="tab:blue")
        inf_idx = np.nonzero(np.isinf(vals))[0]
        if len(inf_idx):
            top = np.nanmax(finite) if np.isfinite(np.nanmax(finite, initial=-np.inf)) else 1.0
            ax.plot(inf_idx, np.full(len(inf_idx), top), "^", color="tab:red")
        ax.set_title(label)
        ax.set_xticks(x)
        ax.set_xticklabels(names if len(names) <= 12 else [""] * len(names), rotation=90, fontsize=6)
    _save(fig, path)


def error_overlay(image: np.ndarray, pred: np.ndarray, gt: np.ndarray, path) -> None:
    """Gray page beside a map of hits (black), false ink (red) and misses (blue)."""
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    rgb = np.ones(gt.shape + (3,))
    rgb[pred & gt] = 0.0
    rgb[pred & ~gt] = (0.9, 0.1, 0.1)
    rgb[~pred & gt] = (0.1, 0.3, 0.9)
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].imshow(image, cmap="gray", vmin=0, vmax=1)
    axes[0].set_title("input")
    axes[1].imshow(rgb)
    axes[1].set_title("errors: red = false ink, blue = missed")
    for a in axes:
        a.axis("off")
    _save(fig, path)


def sweep_plot(points: Sequence[dict], path) -> None:
    """Validation P-FM against parameter count, one labelled dot per grid point."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in points:
        ax.plot(p["params"], p["val_pfm"], "o", color="tab:blue")
        ax.annotate(p["label"], (p["params"], p["val_pfm"]), fontsize=7,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xscale("log")
    ax.set_xlabel("parameters")
    ax.set_ylabel("best validation P-FM")
    vals = [p["val_pfm"] for p in points if math.isfinite(p["val_pfm"])]
    if vals:
        ax.set_ylim(min(vals) - 2, min(100, max(vals) + 2))
    _save(fig, path)
