from .config import ConfigError, ExperimentConfig, TYPES, derive_seed, grid_configs, load_config
from .evaluation import evaluate, evaluate_experiment, sweep_samples
from .grid import report_configs, run_grid
from .reporting import GridEntry, report_grid
from .training import RunManifest, prepare_data, run_experiment, train_run

__all__ = [
    "ConfigError", "ExperimentConfig", "GridEntry", "RunManifest", "TYPES", "derive_seed", "evaluate",
    "evaluate_experiment", "grid_configs", "load_config", "prepare_data", "report_configs", "report_grid",
    "run_experiment", "run_grid", "sweep_samples", "train_run",
]
