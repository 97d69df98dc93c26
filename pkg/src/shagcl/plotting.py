"""Figures for run reports (written to files, never shown)."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 7,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "shagcl",
}


def figsize(width: float = 6.5, ratio: float | None = None) -> tuple[float, float]:
    ratio = (math.sqrt(5) - 1) / 2 if ratio is None else ratio
    return width, width * ratio


def loss_curves(runs: dict[str, list[dict]], path: str | Path, smooth: int = 25) -> Path:
    """One panel per loss term, one line per run; moving average over ``smooth`` steps."""
    terms = ["total", "pco", "ckd"]
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(terms), figsize=figsize(9, 0.33), sharex=True)
        for ax, term in zip(axes, terms):
            for name, rows in runs.items():
                steps = [r["step"] for r in rows]
                vals = [r[term] for r in rows]
                ax.plot(steps, _moving_average(vals, smooth), lw=1.0, label=name)
            ax.set_title(term)
            ax.set_xlabel("step")
        axes[0].set_ylabel("loss")
        axes[0].legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def _moving_average(vals: Sequence[float], window: int) -> list[float]:
    out, acc = [], 0.0
    for i, v in enumerate(vals):
        acc += v
        if i >= window:
            acc -= vals[i - window]
        out.append(acc / min(i + 1, window))
    return out


def per_class_recall(classes: Sequence[str], recalls: dict[str, Sequence[float]],
                     path: str | Path, k: int, group_stops: Sequence[int] = ()) -> Path:
    """Grouped bars of per-predicate recall, classes ordered by training frequency.

    ``group_stops`` marks the end of each predicate group with a dashed line.
    """
    n = len(classes)
    width = 0.8 / max(len(recalls), 1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(max(6.5, 0.35 * n), 0.4))
        for j, (name, vals) in enumerate(recalls.items()):
            xs = [i - 0.4 + width * (j + 0.5) for i in range(n)]
            ax.bar(xs, vals, width=width, label=name)
        for stop in group_stops[:-1]:
            ax.axvline(stop - 0.5, color="0.5", ls="--", lw=0.8)
        ax.set_xticks(range(n))
        ax.set_xticklabels(classes, rotation=60, ha="right")
        ax.set_ylim(0, 1.05)
        ax.set_ylabel(f"R@{k}")
        ax.legend(frameon=False, ncol=len(recalls))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)


def group_counts(names: Sequence[str], counts: Sequence[int], group_stops: Sequence[int],
                 path: str | Path) -> Path:
    """Log-scale training counts coloured by predicate group."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=figsize(max(6.5, 0.3 * len(names)), 0.4))
        start = 0
        for g, stop in enumerate(group_stops):
            xs = list(range(start, stop))
            ax.bar(xs, counts[start:stop], color=f"C{g % 10}", label=f"group {g + 1}")
            start = stop
        ax.set_yscale("log")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right")
        ax.set_ylabel("training instances")
        ax.legend(frameon=False, ncol=min(len(group_stops), 6))
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return Path(path)
