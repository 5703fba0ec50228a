"""Figures for the sample-count sweep and the experiment grid."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
DPI = 150


def savefig(fig, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # fixed metadata keeps PNG bytes reproducible
    fig.savefig(path, dpi=DPI, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_sweep(rows, path, title=None) -> None:
    """Avg and Best metric values against the number of samples K."""
    series = defaultdict(lambda: {"K": [], "avg": [], "best": []})
    for r in rows:
        s = series[r["metric"]]
        s["K"].append(int(r["K"]))
        s["avg"].append(float(r["avg"]))
        s["best"].append(float(r["best"]))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.0, 2.8), sharex=True)
        for ax, key, label in ((axes[0], "avg", "Average"), (axes[1], "best", "Best")):
            for metric, s in series.items():
                ax.plot(s["K"], s[key], marker="o", markersize=3, label=metric)
            ax.set_xlabel("samples K")
            ax.set_ylabel(f"{label} metric")
            ax.set_title(f"{label} metrics")
        axes[1].legend(frameon=False, loc="best")
        if title:
            fig.suptitle(title, fontsize=9)
        savefig(fig, path)


def plot_grid_bars(table: dict, path, metric: str = "BLEU") -> None:
    """Grouped bars of Best-``metric`` by training type; ``table[type][model] = (mean, std)``."""
    types = list(table)
    models = sorted({m for row in table.values() for m in row})
    width = 0.8 / max(len(models), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.0, 2.8))
        for j, model in enumerate(models):
            xs, ys, errs = [], [], []
            for i, t in enumerate(types):
                if model in table[t]:
                    mean, std = table[t][model]
                    xs.append(i + j * width)
                    ys.append(mean)
                    errs.append(std or 0.0)
            ax.bar(xs, ys, width, yerr=errs, label=model, capsize=2)
        ax.set_xticks([i + 0.4 - width / 2 for i in range(len(types))])
        ax.set_xticklabels(types)
        ax.set_ylabel(f"Best-{metric}" if metric != "TER" else "Min-TER")
        ax.legend(frameon=False, ncol=2)
        savefig(fig, path)
