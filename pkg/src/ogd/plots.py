"""Matplotlib figure rendering for the report paths (PNG files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path: Path, cfg_hash: str | None):
    meta = {"Software": "ogd"}
    if cfg_hash:
        meta["ogd-config"] = cfg_hash
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=meta)
    plt.close(fig)


def save_histogram(hist, path, *, xlabel: str, cfg_hash: str | None = None):
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    widths = np.diff(hist.edges)
    ax.bar(hist.edges[:-1], hist.counts, width=widths, align="edge",
           color="tab:blue", alpha=0.8, edgecolor="white", linewidth=0.3)
    ax.set_xlabel(xlabel.replace("_", " "))
    ax.set_ylabel("count")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    _save(fig, Path(path), cfg_hash)


def save_sweep_comparison(scales, metrics_by_scale, baseline, path, *,
                          metric_names=("force_rms_mean", "energy_above_gs_mean"),
                          cfg_hash: str | None = None):
    """Metric vs guidance scale, one panel per metric, baseline as a dashed line."""
    fig, axes = plt.subplots(1, len(metric_names), figsize=(4.0 * len(metric_names), 3.2))
    if len(metric_names) == 1:
        axes = [axes]
    for ax, name in zip(axes, metric_names):
        vals = [metrics_by_scale[s].get(name, float("nan")) for s in scales]
        ax.plot(scales, vals, "o-", color="tab:blue", label="guided")
        base = baseline.get(name)
        if base is not None and np.isfinite(base):
            ax.axhline(base, color="tab:gray", linestyle="--", label="unguided")
        ax.set_xscale("log")
        ax.set_xlabel("guidance scale")
        ax.set_ylabel(name.replace("_", " "))
        ax.spines["right"].set_visible(False)
        ax.spines["top"].set_visible(False)
    axes[0].legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, Path(path), cfg_hash)


def save_cosine_histogram(cosines, path, *, cfg_hash: str | None = None):
    vals = np.asarray(cosines, dtype=np.float64).ravel()
    vals = vals[np.isfinite(vals)]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    ax.hist(vals, bins=60, range=(-1.0, 1.0), color="tab:green", alpha=0.8)
    ax.set_xlabel("per-probe cosine similarity")
    ax.set_ylabel("count")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    _save(fig, Path(path), cfg_hash)
