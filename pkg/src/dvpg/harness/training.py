"""Training runs: one per (config, seed), with dev Max-BLEU model selection."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..corpus import PreparedCorpus, load_prepared, prepare_corpus
from ..metrics import bleu4
from ..objective import ScheduleState, total_loss
from ..seq_model import ParaphraseModel, PrecomputedEmbedding, collate, load_checkpoint, save_checkpoint
from .. import synthetic
from .config import ExperimentConfig, derive_seed
from .generation import generate_candidates

logger = logging.getLogger(__name__)

# Fraction of training spent CE-only under two-step (6 of 20 epochs).
TWO_STEP_FRACTION = 6 / 20


@dataclass
class RunManifest:
    config: dict
    seed: int
    run_dir: str
    checkpoint: Optional[str] = None
    best_dev_max_bleu: Optional[float] = None
    best_epoch: Optional[int] = None
    epochs_completed: int = 0
    status: str = "incomplete"
    train_log: str = ""
    dev_log: str = ""
    started_at: Optional[str] = None
    finished_at: Optional[str] = None

    @property
    def path(self) -> Path:
        return Path(self.run_dir) / "manifest.json"

    def save(self) -> None:
        self.path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig.from_dict(self.config)


def prepare_data(config: ExperimentConfig) -> PreparedCorpus:
    """Build the encoded corpus in ``config.data_dir`` from raw files (or synthetic pairs)."""
    data_dir = Path(config.data_dir)
    paths = list(config.raw_paths)
    fmt = config.dataset_format
    if fmt == "synthetic":
        data_dir.mkdir(parents=True, exist_ok=True)
        raw = data_dir / "synthetic_raw.tsv"
        synthetic.write_quora_tsv(raw, synthetic.generate_pairs(config.synthetic_pairs, config.split_seed))
        paths, fmt = [raw], "quora"
    return prepare_corpus(
        paths, data_dir, dataset_format=fmt, max_source_length=config.max_source_length,
        vocab_size=config.profile_value("vocab_limit"), split_ratios=tuple(config.split_ratios),
        split_seed=config.split_seed, max_pairs=config.max_pairs, lowercase=config.lowercase,
        wordpiece_vocab=config.wordpiece_vocab,
    )


def run_dir_for(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.output_dir) / "runs" / config.tag / f"seed-{seed}"


def build_model(config: ExperimentConfig, vocab_size: int, seed: int) -> ParaphraseModel:
    torch.manual_seed(derive_seed(config.master_seed, seed, "init"))
    provider = PrecomputedEmbedding(config.precomputed_embeddings) if config.precomputed_embeddings else None
    return ParaphraseModel(config.model_config(vocab_size), config.model_kind, config.sampling or "aggregated", provider)


def load_run_model(manifest: RunManifest) -> ParaphraseModel:
    if not manifest.checkpoint or not Path(manifest.checkpoint).exists():
        raise FileNotFoundError(f"run {manifest.run_dir} has no checkpoint")
    cfg = manifest.experiment
    provider = PrecomputedEmbedding(cfg.precomputed_embeddings) if cfg.precomputed_embeddings else None
    model, _ = load_checkpoint(manifest.checkpoint, provider)
    model.eval()
    return model


def schedule_for(config: ExperimentConfig, batches_per_epoch: int, epochs: int) -> ScheduleState:
    boundary = config.two_step_boundary
    if boundary is None:
        boundary = round(epochs * TWO_STEP_FRACTION) * batches_per_epoch
    anneal = batches_per_epoch if config.anneal_length is None else config.anneal_length
    return ScheduleState(0, boundary, anneal, config.schedule or "anneal-only")


def dev_max_bleu(model, pairs, vocab, config: ExperimentConfig, seed: int) -> float:
    K = config.eval_samples if model.variational else 1
    if config.dev_eval_limit is not None:
        pairs = pairs[: config.dev_eval_limit]
    sets = generate_candidates(model, pairs, vocab, K, derive_seed(config.master_seed, seed, "dev"),
                               config.generation_latent, config.length_normalize_beam)
    best = [max(bleu4(c, s.reference).value if c else 0.0 for c in s.candidates) for s in sets]
    return math.fsum(best) / len(best)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S")


def _truncate_log(path: Path, key: str, limit: int) -> None:
    if not path.exists():
        return
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l and json.loads(l)[key] < limit]
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def train_run(config: ExperimentConfig, seed: int, data: PreparedCorpus, resume: bool = True,
              stop_after: Optional[int] = None) -> RunManifest:
    """Train one seed, keeping the checkpoint with the best dev Max-BLEU.

    An interrupted run leaves ``status = "incomplete"`` and a ``last.pt``
    holding model, optimizer, schedule and RNG state; rerunning resumes from
    it. ``stop_after`` ends the call after that many epochs (for testing
    resumption).
    """
    run_dir = run_dir_for(config, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab = data.vocab
    epochs = config.profile_value("epochs")
    batch_size = config.profile_value("batch_size")
    n_batches = math.ceil(len(data.train) / batch_size)
    model = build_model(config, len(vocab), seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.profile_value("learning_rate"))
    schedule = schedule_for(config, n_batches, epochs)
    shuffle_rng = np.random.default_rng(derive_seed(config.master_seed, seed, "shuffle"))
    latent_rng = torch.Generator().manual_seed(derive_seed(config.master_seed, seed, "latent"))
    torch.manual_seed(derive_seed(config.master_seed, seed, "dropout"))
    manifest = RunManifest(config.to_dict(), seed, str(run_dir), train_log=str(run_dir / "train_log.jsonl"),
                           dev_log=str(run_dir / "dev_log.jsonl"), started_at=_now())
    last = run_dir / "last.pt"
    start_epoch = 0
    if resume and (run_dir / "manifest.json").exists():
        previous = RunManifest.load(run_dir / "manifest.json")
        if previous.status == "complete" and previous.config == manifest.config:
            logger.info("%s seed %d already complete", config.tag, seed)
            return previous
        if last.exists() and previous.config == manifest.config:
            model, payload = load_checkpoint(last, model.encoder.provider if config.precomputed_embeddings else None)
            optimizer = torch.optim.Adam(model.parameters(), lr=config.profile_value("learning_rate"))
            optimizer.load_state_dict(payload["optimizer"])
            schedule = ScheduleState(**payload["schedule"])
            shuffle_rng.bit_generator.state = payload["shuffle_rng"]
            latent_rng.set_state(payload["latent_rng"])
            torch.set_rng_state(payload["torch_rng"])
            start_epoch = payload["epoch"]
            manifest = previous
            logger.info("resuming %s seed %d from epoch %d", config.tag, seed, start_epoch)
    _truncate_log(Path(manifest.train_log), "step", schedule.step)
    _truncate_log(Path(manifest.dev_log), "epoch", start_epoch)
    manifest.status = "incomplete"
    manifest.save()

    train_log = open(manifest.train_log, "a", encoding="utf-8")
    try:
        for epoch in range(start_epoch, epochs):
            model.train()
            order = shuffle_rng.permutation(len(data.train))
            for b in range(n_batches):
                batch = collate([data.train[i] for i in order[b * batch_size:(b + 1) * batch_size]], len(vocab))
                losses = total_loss(model, batch, config.loss or 1, schedule, latent_rng, config.length_normalize_ce)
                optimizer.zero_grad()
                losses.total.backward()
                if config.grad_clip:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                record = losses.as_record(schedule.step)
                record["epoch"] = epoch
                train_log.write(json.dumps(record) + "\n")
                schedule.step += 1
            train_log.flush()
            if (epoch + 1) % config.eval_every == 0 or epoch + 1 == epochs:
                score = dev_max_bleu(model, data.dev, vocab, config, seed)
                with open(manifest.dev_log, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"epoch": epoch, "dev_max_bleu": round(score, 6)}) + "\n")
                logger.info("%s seed %d epoch %d dev Max-BLEU %.2f", config.tag, seed, epoch, score)
                if manifest.best_dev_max_bleu is None or score > manifest.best_dev_max_bleu:
                    manifest.best_dev_max_bleu = score
                    manifest.best_epoch = epoch
                    manifest.checkpoint = str(run_dir / "best.pt")
                    save_checkpoint(manifest.checkpoint, model, config.to_dict(), epoch=epoch, seed=seed,
                                    vocab=vocab.to_dict())
            manifest.epochs_completed = epoch + 1
            save_checkpoint(last, model, config.to_dict(), epoch=epoch + 1, seed=seed,
                            optimizer=optimizer.state_dict(), schedule=asdict(schedule),
                            shuffle_rng=shuffle_rng.bit_generator.state, latent_rng=latent_rng.get_state(),
                            torch_rng=torch.get_rng_state())
            manifest.save()
            if stop_after is not None and epoch + 1 - start_epoch >= stop_after and epoch + 1 < epochs:
                return manifest
    finally:
        train_log.close()
    manifest.status = "complete"
    manifest.finished_at = _now()
    manifest.save()
    return manifest


def run_experiment(config: ExperimentConfig, data: Optional[PreparedCorpus] = None, resume: bool = True) -> list[RunManifest]:
    """Train every configured seed; returns one manifest per seed."""
    config.warn_ignored()
    data = data or load_prepared(config.data_dir)
    return [train_run(config, seed, data, resume) for seed in config.seeds]
