"""Figures for benchmark reports, rendered headless to PNG files."""

from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import TYPE_CHECKING

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

if TYPE_CHECKING:
    from .eval.benchmark import Report

STYLE = {
    "font.size": 10,
    "axes.titlesize": 11,
    "axes.labelsize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_metrics(report: "Report", path: Path) -> Path:
    agg = report.aggregates()
    names = ["CEM", "F1"] + (["ACC"] if report.judged else [])
    values = [agg.get(n.lower()) or 0.0 for n in names]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        bars = ax.bar(names, values, color=["#4c72b0", "#55a868", "#c44e52"][: len(names)])
        for bar, v in zip(bars, values):
            ax.annotate(f"{v:.1f}", (bar.get_x() + bar.get_width() / 2, v),
                        ha="center", va="bottom", fontsize=9)
        ax.set_ylim(0, 105)
        ax.set_ylabel("score (%)")
        ax.set_title(f"{agg['scored']} scored / {agg['errors']} errors")
        return _finish(fig, path)


def plot_iterations(report: "Report", path: Path) -> Path:
    rows = report.scored
    counts = Counter(r.iterations for r in rows)
    correct = Counter(r.iterations for r in rows if (r.acc if report.judged else r.cem))
    xs = sorted(counts) or [0]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.bar(xs, [counts[x] for x in xs], color="#bbbbbb", label="all")
        ax.bar(xs, [correct[x] for x in xs], color="#4c72b0", label="correct")
        ax.set_xticks(xs)
        ax.set_xlabel("iterations")
        ax.set_ylabel("examples")
        ax.legend(frameon=False)
        return _finish(fig, path)


def plot_f1_distribution(report: "Report", path: Path) -> Path:
    scores = [r.f1 for r in report.scored]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.hist(scores, bins=[i / 10 for i in range(11)], color="#55a868", edgecolor="white")
        ax.set_xlim(0, 1)
        ax.set_xlabel("token F1")
        ax.set_ylabel("examples")
        return _finish(fig, path)


def plot_report(report: "Report", out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "fig_metrics": plot_metrics(report, out / "metrics.png"),
        "fig_iterations": plot_iterations(report, out / "iterations.png"),
        "fig_f1": plot_f1_distribution(report, out / "f1_distribution.png"),
    }
