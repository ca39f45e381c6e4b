"""Figure rendering for the CLI report paths (Agg backend, PNG files)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_TYPE_COLORS = {"known": "tab:blue", "unknown": "tab:orange", "random": "tab:green"}


def _variant_label(algorithm: str, beta1, beta2) -> str:
    if algorithm == "average":
        return "average"
    return f"corrected ({beta1:g}, {beta2:g})"


def save_sweep_figure(rows, path) -> Path:
    """Accuracy vs lambda, one line per (rule, signal type).

    The plain average is drawn solid, corrected variants dashed/dotted.
    """
    variants: List = []
    for r in rows:
        key = (r.algorithm, r.beta1, r.beta2)
        if key not in variants:
            variants.append(key)
    styles = ["-", "--", ":", "-."]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for vi, (alg, b1, b2) in enumerate(variants):
        style = "-" if alg == "average" else styles[1 + (vi - 1) % (len(styles) - 1)]
        for sig_type, color in _TYPE_COLORS.items():
            pts = sorted((r.lam, r.accuracy) for r in rows
                         if (r.algorithm, r.beta1, r.beta2) == (alg, b1, b2)
                         and r.signal_type == sig_type)
            if not pts:
                continue
            xs, ys = zip(*pts)
            ax.plot(xs, ys, style, color=color,
                    label=f"{sig_type}, {_variant_label(alg, b1, b2)}")
    ax.set_xlabel("decision threshold $\\lambda$")
    ax.set_ylabel("accuracy")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, loc="center left", bbox_to_anchor=(1.01, 0.5))
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_delta_figure(rows: Sequence[dict], path) -> Path:
    """Closed-form gain (lines) against the Monte Carlo estimate (crosses)."""
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    groups: Dict = {}
    for r in rows:
        groups.setdefault((r["C"], r["beta1"], r["beta2"]), []).append(r)
    cmap = plt.get_cmap("viridis", max(len(groups), 2))
    for gi, (key, grp) in enumerate(sorted(groups.items())):
        grp = sorted(grp, key=lambda r: r["alpha"])
        alphas = [r["alpha"] for r in grp]
        color = cmap(gi)
        label = f"C={key[0]}, beta=({key[1]:g}, {key[2]:g})"
        ax.plot(alphas, [r["delta_closed"] for r in grp], "-", color=color, label=label)
        ax.plot(alphas, [r["delta_empirical"] for r in grp], "x", color=color)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("single-instance hit probability $\\alpha$")
    ax.set_ylabel("correction gain at the correct class")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_bench_figure(rows: Sequence[dict], path) -> Path:
    """Trunk vs head per-pass medians (log scale) with the speedup ratio."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    x = np.arange(len(rows))
    width = 0.38
    ax.bar(x - width / 2, [r["trunk_ms"] for r in rows], width, label="trunk pass")
    ax.bar(x + width / 2, [r["head_ms"] for r in rows], width, label="head pass")
    ax.set_yscale("log")
    ax.set_xticks(x)
    ax.set_xticklabels([f"depth {r['depth']}\nbatch {r['batch']}" for r in rows], fontsize=8)
    for xi, r in zip(x, rows):
        ax.annotate(f"x{r['ratio']:.1f}", (xi, r["trunk_ms"]), ha="center",
                    va="bottom", fontsize=8)
    ax.set_ylabel("median ms per pass")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_distribution_figure(entries: Sequence[dict], path) -> Path:
    """Grid of averaged distributions: rows are sample records, columns rules.

    Each entry: {"title", "variants": [(variant label, averaged mass), ...]}.
    """
    n_rows = len(entries)
    n_cols = max(len(e["variants"]) for e in entries)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(3.2 * n_cols, 2.2 * n_rows),
                             squeeze=False)
    for ri, entry in enumerate(entries):
        for ci, (label, mass) in enumerate(entry["variants"]):
            ax = axes[ri][ci]
            ax.bar(np.arange(len(mass)), mass, width=0.9)
            ax.set_ylim(0, 1.02)
            ax.set_title(f"{entry['title']} | {label}", fontsize=8)
            if ri == n_rows - 1:
                ax.set_xlabel("class", fontsize=8)
            ax.tick_params(labelsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def save_train_curves(log_rows: Sequence[dict], path) -> Path:
    """Loss and accuracy curves from the training log."""
    epochs = [r["epoch"] for r in log_rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.4))
    ax1.plot(epochs, [r["train_loss"] for r in log_rows], "-o", ms=3)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, [r["train_acc"] for r in log_rows], "-o", ms=3, label="train")
    ax2.plot(epochs, [r["val_acc"] for r in log_rows], "-s", ms=3, label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.grid(alpha=0.3)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)
