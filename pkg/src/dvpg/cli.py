"""Command line: prepare-data, train, evaluate, sweep, report.

Every subcommand reads one flat YAML config; ``--set key=value`` overrides
single fields. Exit codes: 0 success, 1 configuration error, 2 data error,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from .corpus import DataError, load_prepared
from .harness.config import ConfigError, grid_configs, load_config
from .harness.evaluation import evaluate_experiment, read_candidate_sets, report_from_sets, sweep_samples
from .harness.grid import load_manifests, report_configs
from .harness.training import prepare_data, run_experiment

logger = logging.getLogger("dvpg")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


def _overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _configs(args):
    base = load_config(args.config, _overrides(args.set))
    return base, (grid_configs(base) if getattr(args, "grid", False) else [base])


def cmd_prepare(args) -> None:
    base, _ = _configs(args)
    data = prepare_data(base)
    print(f"prepared {len(data.train)}/{len(data.dev)}/{len(data.test)} pairs, vocab {len(data.vocab)} -> {base.data_dir}")


def cmd_train(args) -> None:
    base, configs = _configs(args)
    data = load_prepared(base.data_dir)
    for cfg in configs:
        for m in run_experiment(cfg, data, resume=not args.no_resume):
            print(f"{cfg.tag} seed {m.seed}: best dev Max-BLEU {m.best_dev_max_bleu:.2f} (epoch {m.best_epoch}) -> {m.checkpoint}")


def cmd_evaluate(args) -> None:
    if args.candidates:
        sets = read_candidate_sets(args.candidates)
        report = report_from_sets(sets)
        for metric, (avg, best) in report.corpus_means().items():
            print(f"{metric}\tavg {avg:.2f}\tbest {best:.2f}")
        return
    base, configs = _configs(args)
    data = load_prepared(base.data_dir)
    for cfg in configs:
        manifests = load_manifests(cfg)
        if not manifests:
            raise FileNotFoundError(f"no trained runs for {cfg.tag}; run train first")
        _, _, agg = evaluate_experiment(manifests, args.split, args.K, data)
        for r in agg:
            print(f"{cfg.tag}\t{r['metric']}\tavg {r['avg_mean']:.2f}\tbest {r['best_mean']:.2f}\t(n={r['n_seeds']})")


def cmd_sweep(args) -> None:
    base, configs = _configs(args)
    data = load_prepared(base.data_dir)
    K_values = args.K or base.sweep_samples
    for cfg in configs:
        for m in load_manifests(cfg):
            if args.seed is not None and m.seed != args.seed:
                continue
            rows = sweep_samples(m, K_values, args.split, data)
            bleu = [r for r in rows if r["metric"] == "BLEU"]
            print(f"{cfg.tag} seed {m.seed}: " + ", ".join(f"K={r['K']} best BLEU {r['best']:.2f}" for r in bleu))


def cmd_report(args) -> None:
    base, configs = _configs(args)
    tables = report_configs(configs, args.split)
    print(tables["best"])
    print(tables["avg"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvpg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, grid=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", required=True, help="flat YAML experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config field")
        if grid:
            p.add_argument("--grid", action="store_true", help="apply to the full Type I-IV grid plus baseline")
        p.set_defaults(func=fn)
        return p

    add("prepare-data", cmd_prepare, "tokenize, filter, split and encode the corpus", grid=False)
    p = add("train", cmd_train, "train all seeds of a config")
    p.add_argument("--no-resume", action="store_true")
    p = add("evaluate", cmd_evaluate, "oracle Avg/Best evaluation of trained runs")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--K", type=int, default=None, help="samples per example (default: eval_samples)")
    p.add_argument("--candidates", help="score an existing candidate-set JSONL file instead")
    p = add("sweep", cmd_sweep, "Avg/Best metrics over nested sample counts")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--K", type=int, nargs="+", default=None)
    p.add_argument("--seed", type=int, default=None)
    p = add("report", cmd_report, "Markdown/CSV grid tables from evaluated runs")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
