"""Delimited metric reports and the matplotlib figures rendered next to them."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import FlowAccuracyReport  # noqa: E402


def write_metric_csv(path, rows: list[tuple[str, float, float, int]]) -> None:
    """Rows of (metric, param, value, count)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "param", "value", "count"])
        for metric, param, value, count in rows:
            writer.writerow([metric, f"{param:g}", f"{value:.6f}", count])


def write_sweep_csv(path, reports: list[FlowAccuracyReport]) -> None:
    """Accuracy-vs-threshold table, one row per threshold."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fraction", "count"])
        for r in reports:
            writer.writerow([f"{r.threshold:g}", f"{r.fraction:.6f}", r.pixel_count])


def plot_sweep(path, reports: list[FlowAccuracyReport]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r.threshold for r in reports], [r.fraction for r in reports],
            marker="o", color="tab:blue")
    ax.set_xlabel("endpoint error threshold (px)")
    ax.set_ylabel("fraction correct")
    ax.set_ylim(0.0, 1.02)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_loss_csv(path, curve: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, v in enumerate(curve):
            writer.writerow([i, f"{v:.8g}"])


def plot_loss_curves(path, curves: dict[str, list[float]]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, curve in curves.items():
        ax.plot(range(len(curve)), curve, label=name)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    if curves:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
