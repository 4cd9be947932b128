"""Report writers: JSON documents, CSV tables, and matplotlib figures.

Every CLI subcommand funnels its results through here so each run directory
ends up with the same trio: a machine-readable JSON report, delimited data,
and rendered figures.  JSON output is byte-stable for a fixed seed; wall
clock and host details deliberately stay out of it.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_json(path, doc: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header: list[str], rows: list) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _save(fig, path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def separation_figure(report_doc: dict, path) -> Path:
    """Heatmap of pairwise embedding gaps on a log scale."""
    names = report_doc["graphs"]
    n = len(names)
    gaps = np.full((n, n), np.nan)
    for p in report_doc["pairs"]:
        g = max(p["gap"], 1e-300)
        gaps[p["i"], p["j"]] = gaps[p["j"], p["i"]] = np.log10(g)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * n, 0.8 + 0.6 * n))
    im = ax.imshow(gaps, cmap="viridis")
    ax.set_xticks(range(n), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(n), names, fontsize=8)
    ax.set_title(f"log10 embedding gap ({report_doc['set']})", fontsize=10)
    fig.colorbar(im, ax=ax, shrink=0.8)
    return _save(fig, path)


def wl_figure(set_name: str, graph_names: list[str], class_counts: list[list[int]], path) -> Path:
    """Stable color-class sizes per graph after refinement."""
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(graph_names)), 3.2))
    for i, counts in enumerate(class_counts):
        bottom = 0
        for c in counts:
            ax.bar(i, c, bottom=bottom, edgecolor="white", color="tab:blue")
            bottom += c
    ax.set_xticks(range(len(graph_names)), graph_names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("nodes per color class")
    ax.set_title(f"color refinement classes ({set_name})", fontsize=10)
    return _save(fig, path)


def gradcheck_figure(cases: list[dict], tolerance: float, path) -> Path:
    labels = [c["name"] for c in cases]
    errors = [max(c["max_rel_error"], 1e-18) for c in cases]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(labels)), 3.4))
    ax.bar(range(len(labels)), errors, color="tab:blue")
    ax.axhline(tolerance, color="tab:red", linestyle="--", label=f"tolerance {tolerance:g}")
    ax.set_yscale("log")
    ax.set_xticks(range(len(labels)), labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max relative error")
    ax.legend(fontsize=8)
    return _save(fig, path)


def training_figure(history: list[dict], path) -> Path:
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(epochs, [h["train_loss"] for h in history], label="train loss")
    for key, label in (("val_mae", "validation MAE"), ("val_auc", "validation AUC"),
                       ("val_loss", "validation loss")):
        if key in history[0] and history[0][key] is not None:
            ax.plot(epochs, [h[key] for h in history], label=label)
    ax.set_xlabel("epoch")
    ax.legend(fontsize=8)
    ax.set_title("training history", fontsize=10)
    return _save(fig, path)


def attention_figure(records: list[dict], path) -> Path:
    """Grid of per-layer, per-head attention heatmaps."""
    n_layers = max(r["layer"] for r in records) + 1
    n_heads = max(r["head"] for r in records) + 1
    fig, axes = plt.subplots(n_layers, n_heads,
                             figsize=(2.1 * n_heads, 2.1 * n_layers),
                             squeeze=False)
    for r in records:
        ax = axes[r["layer"]][r["head"]]
        ax.imshow(np.asarray(r["matrix"]), cmap="magma", vmin=0.0)
        ax.set_title(f"L{r['layer']} H{r['head']}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
        if r["pool_index"] is not None:
            ax.axvline(r["pool_index"] - 0.5, color="cyan", linewidth=0.6)
            ax.axhline(r["pool_index"] - 0.5, color="cyan", linewidth=0.6)
    return _save(fig, path)


def eval_node_figure(pred: np.ndarray, target: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 4.0))
    ax.scatter(target, pred, s=8, alpha=0.5)
    lo = min(target.min(), pred.min())
    hi = max(target.max(), pred.max())
    ax.plot([lo, hi], [lo, hi], color="tab:red", linewidth=0.8)
    ax.set_xlabel("target")
    ax.set_ylabel("prediction")
    ax.set_title("node predictions", fontsize=10)
    return _save(fig, path)


def eval_graph_figure(scores: np.ndarray, labels: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 3.4))
    bins = np.linspace(scores.min() - 1e-9, scores.max() + 1e-9, 25)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="negatives")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="positives")
    ax.set_xlabel("logit")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    ax.set_title("graph logits by label", fontsize=10)
    return _save(fig, path)
