"""Run and report the full Type I-IV x model/loss grid."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from ..corpus import PreparedCorpus, load_prepared
from .config import ExperimentConfig, grid_configs
from .evaluation import METRIC_COLUMNS, evaluate_experiment, read_rows, write_rows
from .reporting import GridEntry, report_grid
from .training import RunManifest, run_dir_for, run_experiment

logger = logging.getLogger(__name__)


def entry_from_csvs(config: ExperimentConfig, split: str) -> GridEntry:
    """Collect per-seed corpus means from the run directories' metric CSVs."""
    entry = GridEntry(config)
    for seed in config.seeds:
        path = run_dir_for(config, seed) / f"metrics_{split}.csv"
        if not path.exists():
            continue
        means = {r["metric"]: (float(r["avg"]), float(r["best"])) for r in read_rows(path)}
        entry.per_seed.append(means)
    return entry


def load_manifests(config: ExperimentConfig) -> list[RunManifest]:
    out = []
    for seed in config.seeds:
        path = run_dir_for(config, seed) / "manifest.json"
        if path.exists():
            out.append(RunManifest.load(path))
    return out


def report_configs(configs, split: str = "test", out_dir=None, plot: bool = True) -> dict:
    entries = [entry_from_csvs(c, split) for c in configs]
    out_dir = out_dir or Path(configs[0].output_dir) / "report"
    return report_grid(entries, out_dir, plot=plot)


def run_grid(base: ExperimentConfig, data: Optional[PreparedCorpus] = None, split: str = "test",
             configs=None, plot: bool = True) -> dict:
    """Train, evaluate and tabulate every grid config; writes ``grid_metrics_<split>.csv``."""
    data = data or load_prepared(base.data_dir)
    configs = configs or grid_configs(base)
    rows = []
    for cfg in configs:
        manifests = run_experiment(cfg, data)
        _, seed_rows, _ = evaluate_experiment(manifests, split, data=data)
        rows.extend(seed_rows)
    out_dir = Path(base.output_dir) / "report"
    write_rows(out_dir / f"grid_metrics_{split}.csv", METRIC_COLUMNS, rows)
    return report_configs(configs, split, out_dir, plot)
