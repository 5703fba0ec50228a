"""Experiment configuration: a flat key/value YAML document."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from ..objective import ANNEAL_ONLY, LOSS_KINDS, SCHEDULE_KINDS, TWO_STEP
from ..seq_model import MODEL_KINDS, PROFILES, ModelConfig
from ..variational import AGGREGATED, INDEPENDENT, SAMPLING_MODES

logger = logging.getLogger(__name__)

TYPES = {
    "I": (INDEPENDENT, ANNEAL_ONLY),
    "II": (INDEPENDENT, TWO_STEP),
    "III": (AGGREGATED, ANNEAL_ONLY),
    "IV": (AGGREGATED, TWO_STEP),
}
TYPE_OF = {v: k for k, v in TYPES.items()}
DATASET_FORMATS = ("quora", "msrp", "synthetic")
_MODEL_OVERRIDES = ("embedding_dim", "hidden_dim", "num_layers", "num_heads", "projection_dim",
                    "feedforward_dim", "target_embedding_dim", "max_decode_steps", "beam_width", "dropout")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    model_kind: str = "dvpg"
    loss_kind: Optional[int] = None
    sampling_mode: Optional[str] = None
    schedule_kind: Optional[str] = None
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    master_seed: int = 0
    epochs: Optional[int] = None
    eval_samples: int = 10
    profile: str = "desk"
    # data
    dataset_format: str = "synthetic"
    raw_paths: list = field(default_factory=list)
    synthetic_pairs: int = 2000
    data_dir: str = "data"
    split_seed: int = 0
    split_ratios: list = field(default_factory=lambda: [0.70, 0.15, 0.15])
    max_source_length: int = 14
    max_pairs: Optional[int] = None
    vocab_limit: Optional[int] = None
    lowercase: bool = True
    wordpiece_vocab: Optional[str] = None
    precomputed_embeddings: Optional[str] = None
    # training
    output_dir: str = "runs"
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    grad_clip: float = 5.0
    two_step_boundary: Optional[int] = None
    anneal_length: Optional[int] = None
    length_normalize_ce: bool = False
    eval_every: int = 1
    dev_eval_limit: Optional[int] = None
    # generation
    generation_latent: str = "posterior"
    length_normalize_beam: bool = False
    sweep_samples: list = field(default_factory=lambda: [1, 5, 10, 20])
    # model overrides (None -> profile)
    embedding_dim: Optional[int] = None
    hidden_dim: Optional[int] = None
    num_layers: Optional[int] = None
    num_heads: Optional[int] = None
    projection_dim: Optional[int] = None
    feedforward_dim: Optional[int] = None
    target_embedding_dim: Optional[int] = None
    max_decode_steps: Optional[int] = None
    beam_width: Optional[int] = None
    dropout: Optional[float] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {self.model_kind!r}")
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {tuple(PROFILES)}, got {self.profile!r}")
        if self.dataset_format not in DATASET_FORMATS:
            raise ConfigError(f"dataset_format must be one of {DATASET_FORMATS}")
        if self.loss_kind is not None and self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.sampling_mode is not None and self.sampling_mode not in SAMPLING_MODES:
            raise ConfigError(f"sampling_mode must be one of {SAMPLING_MODES}")
        if self.schedule_kind is not None and self.schedule_kind not in SCHEDULE_KINDS:
            raise ConfigError(f"schedule_kind must be one of {SCHEDULE_KINDS}")
        if self.generation_latent not in ("posterior", "prior"):
            raise ConfigError("generation_latent must be posterior or prior")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.eval_samples < 1 or self.eval_every < 1:
            raise ConfigError("eval_samples and eval_every must be >= 1")
        if sorted(self.sweep_samples) != list(self.sweep_samples) or min(self.sweep_samples) < 1:
            raise ConfigError("sweep_samples must be ascending positive integers")

    # resolved values ---------------------------------------------------
    @property
    def variational(self) -> bool:
        return self.model_kind != "baseline"

    @property
    def loss(self) -> Optional[int]:
        return (self.loss_kind or 2) if self.variational else None

    @property
    def sampling(self) -> Optional[str]:
        return (self.sampling_mode or AGGREGATED) if self.variational else None

    @property
    def schedule(self) -> Optional[str]:
        return (self.schedule_kind or TWO_STEP) if self.variational else None

    @property
    def training_type(self) -> str:
        return TYPE_OF[(self.sampling, self.schedule)] if self.variational else "-"

    @property
    def tag(self) -> str:
        if not self.variational:
            return "baseline"
        return f"{self.model_kind}-loss{self.loss}-type{self.training_type}"

    def profile_value(self, key: str):
        value = getattr(self, key)
        return PROFILES[self.profile][key] if value is None else value

    def model_config(self, vocab_size: int) -> ModelConfig:
        overrides = {k: getattr(self, k) for k in _MODEL_OVERRIDES if getattr(self, k) is not None}
        return ModelConfig.from_profile(self.profile, vocab_size, max_source_length=self.max_source_length, **overrides)

    def warn_ignored(self) -> list[str]:
        ignored = []
        if not self.variational:
            ignored = [k for k in ("loss_kind", "sampling_mode", "schedule_kind") if getattr(self, k) is not None]
            for k in ignored:
                logger.warning("baseline model ignores %s=%r", k, getattr(self, k))
        return ignored

    def with_type(self, model_kind: str, training_type: Optional[str] = None, loss_kind: Optional[int] = None):
        if model_kind == "baseline":
            return replace(self, model_kind="baseline", loss_kind=None, sampling_mode=None, schedule_kind=None)
        sampling, schedule = TYPES[training_type]
        return replace(self, model_kind=model_kind, loss_kind=loss_kind, sampling_mode=sampling, schedule_kind=schedule)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def load_config(path, overrides: Optional[dict] = None) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError("config must be a flat key/value mapping")
    data.update(overrides or {})
    return ExperimentConfig.from_dict(data)


def derive_seed(master: int, *parts) -> int:
    """Stream seed: first 8 bytes of sha256("master:part1:part2...") as an int < 2**63."""
    text = ":".join(str(p) for p in (master, *parts))
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def grid_configs(base: ExperimentConfig) -> list[ExperimentConfig]:
    """Types I-IV x {DVPG loss 3, 2, 1, VAE}, then the baseline (17 configs)."""
    out = []
    for t in TYPES:
        for kind, loss in (("dvpg", 3), ("dvpg", 2), ("dvpg", 1), ("vae", 2)):
            out.append(base.with_type(kind, t, loss))
    out.append(base.with_type("baseline"))
    return out
