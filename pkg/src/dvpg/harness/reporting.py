"""Grid tables: rows (Type, model, loss), metric columns as mean +- std over seeds."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from ..metrics import METRIC_NAMES, aggregate_seeds, direction_of
from .config import ExperimentConfig
from .evaluation import fmt, write_rows

TABLE_COLUMNS = ("training_type", "model", "loss", "metric", "n_seeds", "mean", "std")


@dataclass
class GridEntry:
    config: ExperimentConfig
    # one {metric: (avg, best)} dict per completed seed
    per_seed: list = field(default_factory=list)

    @property
    def label(self) -> str:
        if self.config.model_kind == "dvpg":
            return f"DVPG Loss {self.config.loss}"
        return "VAE" if self.config.model_kind == "vae" else "Seq2Seq Baseline"

    def stat(self, metric: str, column: str) -> tuple[Optional[float], Optional[float]]:
        if not self.per_seed:
            return None, None
        idx = 0 if column == "avg" else 1
        return aggregate_seeds([s[metric][idx] for s in self.per_seed])


def _header(column: str, metric: str) -> str:
    if column == "avg":
        return f"Avg-{metric}"
    return ("Min-" if metric == "TER" else "Max-") + metric


def _cell(entry: GridEntry, metric: str, column: str, expected: int) -> str:
    mean, std = entry.stat(metric, column)
    if mean is None:
        return f"missing (n=0/{expected})"
    text = f"{mean:.2f}" if std is None else f"{mean:.2f}±{std:.2f}"
    if len(entry.per_seed) < expected:
        text += f" (n={len(entry.per_seed)}/{expected})"
    return text


def _summary(entries: Sequence[GridEntry], metric: str, column: str) -> Optional[GridEntry]:
    scored = [(e.stat(metric, column)[0], i, e) for i, e in enumerate(entries) if e.per_seed]
    if not scored:
        return None
    if direction_of(metric) == "minimize":
        return min(scored, key=lambda t: (t[0], t[1]))[2]
    return min(scored, key=lambda t: (-t[0], t[1]))[2]


def markdown_table(entries: Sequence[GridEntry], column: str, expected_seeds: int) -> str:
    variational = [e for e in entries if e.config.variational]
    baselines = [e for e in entries if not e.config.variational]
    head = ["Method", "Model"] + [_header(column, m) for m in METRIC_NAMES]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for e in variational:
        cells = [_cell(e, m, column, expected_seeds) for m in METRIC_NAMES]
        lines.append(f"| Type {e.config.training_type} | {e.label} | " + " | ".join(cells) + " |")
    winners = [_summary(variational, m, column) for m in METRIC_NAMES]
    if variational:
        def row(name, fn):
            return f"| {name} | | " + " | ".join("-" if w is None else fn(w) for w in winners) + " |"
        lines.append(row("Best Model", lambda w: w.config.model_kind.upper()))
        lines.append(row("Best Loss Type", lambda w: str(w.config.loss) if w.config.model_kind == "dvpg" else "-"))
        lines.append(row("Best Training Type", lambda w: w.config.training_type))
    for e in baselines:
        cells = [_cell(e, m, column, expected_seeds) for m in METRIC_NAMES]
        lines.append(f"| - | {e.label} | " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def table_rows(entries: Sequence[GridEntry], column: str) -> list[dict]:
    rows = []
    for e in entries:
        for m in METRIC_NAMES:
            mean, std = e.stat(m, column)
            rows.append({"training_type": e.config.training_type, "model": e.config.model_kind,
                         "loss": e.config.loss or "-", "metric": m, "n_seeds": len(e.per_seed),
                         "mean": mean, "std": std})
    return rows


def report_grid(entries: Sequence[GridEntry], out_dir=None, expected_seeds: Optional[int] = None,
                plot: bool = True) -> dict:
    """Best- and Avg-metric tables (Markdown + CSV) for a grid of configs.

    Every configured entry gets a row; entries with fewer seeds than
    expected are annotated with their seed count.
    """
    expected = expected_seeds or max((len(e.config.seeds) for e in entries), default=0)
    tables = {col: markdown_table(entries, col, expected) for col in ("best", "avg")}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        text = "## Best-metric scores\n\n" + tables["best"] + "\n## Avg-metric scores\n\n" + tables["avg"]
        (out_dir / "report.md").write_text(text, encoding="utf-8")
        for col in ("best", "avg"):
            write_rows(out_dir / f"grid_{col}.csv", TABLE_COLUMNS, table_rows(entries, col))
        if plot:
            from .plotting import plot_grid_bars

            bars = {}
            for e in entries:
                if e.config.variational and e.per_seed:
                    bars.setdefault(f"Type {e.config.training_type}", {})[e.label] = e.stat("BLEU", "best")
            if bars:
                plot_grid_bars(bars, out_dir / "grid_best_bleu.png")
    return tables
