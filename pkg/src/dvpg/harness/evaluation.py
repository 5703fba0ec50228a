"""Oracle evaluation of trained runs, the sample-count sweep and metric CSVs."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Optional, Sequence

from ..corpus import PreparedCorpus, load_prepared
from ..metrics import METRIC_NAMES, MetricReport, aggregate_seeds
from .config import ExperimentConfig, derive_seed
from .generation import CandidateSet, generate_candidates
from .training import RunManifest, load_run_model

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("model", "loss", "training_type", "seed", "metric", "avg", "best")
AGGREGATE_COLUMNS = ("model", "loss", "training_type", "metric", "n_seeds", "avg_mean", "avg_std", "best_mean", "best_std")
SWEEP_COLUMNS = ("K", "metric", "avg", "best")


def fmt(x: Optional[float]) -> str:
    return "" if x is None else f"{x:.4f}"


def write_candidate_sets(path, sets: Sequence[CandidateSet]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in sets:
            f.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def read_candidate_sets(path) -> list[CandidateSet]:
    with open(path, encoding="utf-8") as f:
        return [CandidateSet(**json.loads(line)) for line in f if line.strip()]


def report_from_sets(sets: Sequence[CandidateSet], K: Optional[int] = None) -> MetricReport:
    """Score candidate sets, optionally on the first ``K`` candidates only."""
    records = [(s.example_id, s.reference, s.candidates[:K] if K else s.candidates) for s in sets]
    return MetricReport.from_candidates(records)


def _split_pairs(data: PreparedCorpus, split: str):
    if split not in ("train", "dev", "test"):
        raise ValueError(f"unknown split {split!r}")
    return getattr(data, split)


def candidates_for(manifest: RunManifest, split: str, K: int, data: Optional[PreparedCorpus] = None) -> list[CandidateSet]:
    cfg = manifest.experiment
    data = data or load_prepared(cfg.data_dir)
    model = load_run_model(manifest)
    K = K if model.variational else 1
    seed = derive_seed(cfg.master_seed, manifest.seed, "eval", split)
    return generate_candidates(model, _split_pairs(data, split), data.vocab, K, seed,
                               cfg.generation_latent, cfg.length_normalize_beam)


def metric_rows(cfg: ExperimentConfig, seed: int, report: MetricReport) -> list[dict]:
    rows = []
    for metric, (avg, best) in report.corpus_means().items():
        rows.append({"model": cfg.model_kind, "loss": cfg.loss or "-", "training_type": cfg.training_type,
                     "seed": seed, "metric": metric, "avg": avg, "best": best})
    return rows


def write_rows(path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) if isinstance(r[c], float) or r[c] is None else r[c] for c in columns])


def read_rows(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def evaluate(manifest: RunManifest, split: str = "test", K: Optional[int] = None,
             data: Optional[PreparedCorpus] = None, write: bool = True) -> MetricReport:
    """Generate K candidates per example and score Avg/Best for all five metrics.

    Writes ``candidates_<split>.jsonl`` and ``metrics_<split>.csv`` into the
    run directory. Baseline runs produce a single deterministic candidate.
    """
    cfg = manifest.experiment
    K = K or cfg.eval_samples
    sets = candidates_for(manifest, split, K, data)
    report = report_from_sets(sets)
    if write:
        run_dir = Path(manifest.run_dir)
        write_candidate_sets(run_dir / f"candidates_{split}.jsonl", sets)
        write_rows(run_dir / f"metrics_{split}.csv", METRIC_COLUMNS, metric_rows(cfg, manifest.seed, report))
    return report


def aggregate_rows(cfg: ExperimentConfig, per_seed: Sequence[MetricReport]) -> list[dict]:
    means = [r.corpus_means() for r in per_seed]
    rows = []
    for metric in METRIC_NAMES:
        avg_mean, avg_std = aggregate_seeds([m[metric][0] for m in means])
        best_mean, best_std = aggregate_seeds([m[metric][1] for m in means])
        rows.append({"model": cfg.model_kind, "loss": cfg.loss or "-", "training_type": cfg.training_type,
                     "metric": metric, "n_seeds": len(means), "avg_mean": avg_mean, "avg_std": avg_std,
                     "best_mean": best_mean, "best_std": best_std})
    return rows


def evaluate_experiment(manifests: Sequence[RunManifest], split: str = "test", K: Optional[int] = None,
                        data: Optional[PreparedCorpus] = None) -> tuple[list[MetricReport], list[dict], list[dict]]:
    """Evaluate every seed of one config; writes per-seed and aggregated CSVs next to the runs."""
    reports, rows = [], []
    for m in manifests:
        if m.status != "complete":
            logger.warning("evaluating incomplete run %s", m.run_dir)
        report = evaluate(m, split, K, data)
        reports.append(report)
        rows.extend(metric_rows(m.experiment, m.seed, report))
    cfg = manifests[0].experiment
    agg = aggregate_rows(cfg, reports)
    out_dir = Path(manifests[0].run_dir).parent
    write_rows(out_dir / f"metrics_{split}.csv", METRIC_COLUMNS, rows)
    write_rows(out_dir / f"metrics_{split}_aggregated.csv", AGGREGATE_COLUMNS, agg)
    return reports, rows, agg


def sweep_samples(manifest: RunManifest, K_values: Sequence[int], split: str = "test",
                  data: Optional[PreparedCorpus] = None, out_dir=None, plot: bool = True) -> list[dict]:
    """Avg/Best per metric for each K, on nested candidate sets.

    ``max(K_values)`` draws are generated once; smaller K use prefixes, so
    Best values are monotone in K by construction.
    """
    K_values = list(K_values)
    if K_values != sorted(K_values) or not K_values or K_values[0] < 1:
        raise ValueError("K values must be ascending positive integers")
    sets = candidates_for(manifest, split, K_values[-1], data)
    rows = []
    for K in K_values:
        for metric, (avg, best) in report_from_sets(sets, K).corpus_means().items():
            rows.append({"K": K, "metric": metric, "avg": avg, "best": best})
    out_dir = Path(out_dir or manifest.run_dir)
    write_rows(out_dir / f"sweep_{split}.csv", SWEEP_COLUMNS, rows)
    if plot:
        from .plotting import plot_sweep

        plot_sweep(rows, out_dir / f"sweep_{split}.png", title=manifest.experiment.tag)
    return rows
