"""Figure rendering for run outputs.

Each report helper takes the delimited output already written by a command
(history CSV, eval report) and renders a PNG next to it. All figures use
the Agg backend so headless runs work.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_history_csv(path, history, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in columns})


def read_history_csv(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def render_history(csv_path, png_path=None) -> Path:
    """Training curves: loss, mean margin, clip fraction, reward margin."""
    rows = read_history_csv(csv_path)
    png_path = Path(png_path) if png_path else Path(csv_path).with_suffix(".png")
    steps = [r["step"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = [("loss", "ranking loss"), ("mean_margin", "mean margin"),
              ("clip_fraction", "clip fraction"), ("reward_margin", "reward margin")]
    for ax, (key, label) in zip(axes.ravel(), panels):
        ax.plot(steps, [r[key] for r in rows], lw=1.2)
        ax.set_title(label)
        ax.grid(alpha=0.3)
    for ax in axes[-1]:
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def render_win_rates(report, png_path) -> Path:
    """Bar chart of overall and per-condition win rates."""
    png_path = Path(png_path)
    labels = ["all"] + [f"c={c}" for c in sorted(report.per_condition)]
    values = [report.win_rate] + [report.per_condition[c]
                                  for c in sorted(report.per_condition)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(labels, values, color="tab:blue")
    ax.axhline(0.5, color="gray", ls="--", lw=1)
    ax.set_ylim(0, 1)
    ax.set_ylabel("win rate")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def render_samples(world, samples_by_label, png_path) -> Path:
    """Scatter of generated samples over the mixture means."""
    png_path = Path(png_path)
    fig, ax = plt.subplots(figsize=(6, 6))
    for label, pts in samples_by_label.items():
        pts = np.asarray(pts)
        ax.scatter(pts[:, 0], pts[:, 1], s=8, alpha=0.5, label=label)
    means = world.means.reshape(-1, 2)
    ax.scatter(means[:, 0], means[:, 1], marker="x", c="k", s=60, label="mixture means")
    ax.legend(fontsize=8)
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path
