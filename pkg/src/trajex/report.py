"""Figure and table rendering for suite results.

Reads the JSONL records / summary JSON that `bench` emits and writes PNG
figures plus a flat CSV next to them.  Strictly a presentation layer: nothing
here feeds back into metric computation.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def load_records(jsonl_path) -> list:
    return [json.loads(line) for line in Path(jsonl_path).read_text().splitlines()]


def write_summary_csv(summary: dict, path) -> None:
    """One row per n_com with the headline metrics."""
    k_values = summary["config"]["k_values"]
    fields = ["n_com", "n_records"] + [f"top{k}" for k in k_values] + \
        ["random_rate", "rank_collision_spearman", "mean_accuracy", "mean_miou",
         "mean_bytes_in"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for n_com, entry in sorted(summary["per_n_com"].items(), key=lambda kv: int(kv[0])):
            row = {"n_com": n_com, "n_records": entry["n_records"],
                   "random_rate": entry["random_rate"],
                   "rank_collision_spearman": entry["rank_collision_spearman"],
                   "mean_accuracy": float(np.mean(entry["accuracy"])),
                   "mean_miou": float(np.mean(entry["miou"])),
                   "mean_bytes_in": entry["mean_bytes_in"]}
            for k in k_values:
                row[f"top{k}"] = entry["topk"][str(k)]
            writer.writerow(row)


def plot_collision_vs_ncom(summary: dict, path) -> None:
    ks = summary["config"]["k_values"]
    n_coms = sorted(int(n) for n in summary["per_n_com"])
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for k in ks:
        rates = [summary["per_n_com"][str(n)]["topk"][str(k)] for n in n_coms]
        ax.plot(n_coms, rates, marker="o", label=f"top-{k}")
    rand = [summary["per_n_com"][str(n)]["random_rate"] for n in n_coms]
    ax.plot(n_coms, rand, linestyle="--", color="tab:orange", label="random")
    ax.set_xlabel("communicating agents")
    ax.set_ylabel("hard collision rate")
    ax.set_xticks(n_coms)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rank_cost_curve(summary: dict, path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.4))
    for n_com, entry in sorted(summary["per_n_com"].items(), key=lambda kv: int(kv[0])):
        curve = entry["rank_curve"]
        ranks = np.arange(1, len(curve["mean_cost"]) + 1)
        axes[0].plot(ranks, curve["mean_cost"], label=f"n_com={n_com}")
        axes[1].plot(ranks, curve["collision_frequency"], label=f"n_com={n_com}")
    axes[0].set_xlabel("trajectory rank")
    axes[0].set_ylabel("mean fused cost")
    axes[1].set_xlabel("trajectory rank")
    axes[1].set_ylabel("collision frequency")
    for ax in axes:
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_segmentation_metrics(summary: dict, path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for n_com, entry in sorted(summary["per_n_com"].items(), key=lambda kv: int(kv[0])):
        steps = np.arange(1, len(entry["accuracy"]) + 1)
        ax.plot(steps, entry["accuracy"], marker="o", label=f"acc n_com={n_com}")
        ax.plot(steps, entry["miou"], marker="s", linestyle="--",
                label=f"mIoU n_com={n_com}")
    ax.set_xlabel("forecast step")
    ax.set_ylabel("metric")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(summary: dict, out_dir) -> list:
    """Write all figures and the CSV table; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created = []
    csv_path = out_dir / "summary.csv"
    write_summary_csv(summary, csv_path)
    created.append(csv_path)
    figures = [
        ("collision_vs_ncom.png", plot_collision_vs_ncom),
        ("rank_cost_curve.png", plot_rank_cost_curve),
        ("segmentation_metrics.png", plot_segmentation_metrics),
    ]
    for name, renderer in figures:
        path = out_dir / name
        renderer(summary, path)
        created.append(path)
    return created
