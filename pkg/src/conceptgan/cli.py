"""Command line entry point: ``conceptgan {train,eval,visualize,noise-stats}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, build_config, dump_config, read_config
from .data import TOY_CLASSES
from .noise import METHODS, noise_stats

log = logging.getLogger("conceptgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _seeds(text: str):
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _add_data_args(p):
    p.add_argument("--dataset", choices=["cifar10", "cifar100", "toy"])
    p.add_argument("--data-root", help="dataset root (default: $CONCEPTGAN_DATA)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one run per seed")
    p.add_argument("--config", help="flat key = value config file")
    _add_data_args(p)
    p.add_argument("--gan", choices=["vanilla", "cgan"])
    p.add_argument("--noise", choices=list(METHODS))
    p.add_argument("--noise-size", type=int)
    p.add_argument("--concepts", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--disc", choices=["vgg8", "vgg11", "vgg19"])
    p.add_argument("--steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seeds", type=_seeds)
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    p.add_argument("--out", help="directory for metrics.csv / metrics.txt")

    p = sub.add_parser("visualize", help="top-k exemplar grids per concept")
    p.add_argument("--checkpoint", required=True)
    _add_data_args(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--concept", type=int)
    group.add_argument("--all-concepts", action="store_true")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--winners-only", action="store_true",
                   help="rank only images whose highest-scoring concept is the one shown")
    p.add_argument("--out", default="grids")

    p = sub.add_parser("noise-stats", help="moment/structure report for the noise methods")
    p.add_argument("--method", choices=list(METHODS) + ["all"], default="all")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--noise-size", type=int, default=10)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def cmd_train(args) -> int:
    values = {}
    if args.config:
        if not Path(args.config).is_file():
            raise UsageError(f"config file not found: {args.config}")
        values = read_config(args.config)
    overrides = {
        "dataset": args.dataset, "data_root": args.data_root, "gan": args.gan, "noise": args.noise,
        "noise_size": args.noise_size, "concepts": args.concepts, "batch_size": args.batch_size,
        "disc": args.disc, "steps": args.steps, "epochs": args.epochs, "seeds": args.seeds, "out": args.out,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.epochs and args.steps is None:
        values["steps"] = 0
    config = build_config(values)

    from .train import fit

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": "train",
        "config": config.to_dict(),
        "seeds": list(config.seeds),
        "out": str(out),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    report = fit(config)
    print((out / "report.txt").read_text(), end="")
    log.debug("resolved config:\n%s", dump_config(config))
    return EXIT_OK if report else EXIT_RUNTIME


def _checkpoint_and_data(args):
    from .train import datasets_for, load_checkpoint

    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    state, config = load_checkpoint(args.checkpoint)
    if config is None:
        raise CheckpointError(f"{args.checkpoint}: no training config stored")
    if args.dataset and args.dataset != config.dataset:
        raise CheckpointError(f"checkpoint was trained on {config.dataset}, not {args.dataset}")
    if args.data_root:
        config.data_root = args.data_root
    _, test = datasets_for(config)
    return state, config, test


def cmd_eval(args) -> int:
    from .evaluation import aggregate_seeds, evaluate, write_report

    state, _, test = _checkpoint_and_data(args)
    report = evaluate(state.model, test)
    print(f"accuracy {report.accuracy:.2f}  aux_accuracy {report.aux_accuracy:.2f}  samples {report.sample_count}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(aggregate_seeds([report], [state.seed]), out, "metrics")
    return EXIT_OK


def cmd_visualize(args) -> int:
    from .evaluation import build_activation_index, render_concept_grid

    if args.top_k < 1:
        raise UsageError("--top-k must be >= 1")
    state, config, test = _checkpoint_and_data(args)
    count = state.model.config.concept_count
    if args.concept is not None and not 0 <= args.concept < count:
        raise UsageError(f"--concept {args.concept} out of range; model has {count} concepts")
    concepts = range(count) if args.all_concepts else [args.concept]
    index = build_activation_index(state.model, test, winners_only=args.winners_only)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = TOY_CLASSES if config.dataset == "toy" else None
    for c in concepts:
        path = out / f"concept_{c:03d}.png"
        render_concept_grid(index, test, c, args.top_k, path, class_names=names)
        print(path)
    index.to_csv(out / "index.csv")
    return EXIT_OK


STATS_COLUMNS = ("method", "batch", "size", "draws", "pooled_mean", "pooled_var", "generator_mean",
                 "generator_var", "max_within_row_var", "max_across_row_var", "row_axis_corr",
                 "col_axis_corr", "ks_stat", "ks_pvalue")


def cmd_noise_stats(args) -> int:
    if min(args.batch_size, args.noise_size, args.draws) < 1:
        raise UsageError("--batch-size, --noise-size and --draws must be >= 1")
    methods = METHODS if args.method == "all" else (args.method,)
    rows = [noise_stats(m, args.batch_size, args.noise_size, args.draws, args.seed) for m in methods]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=STATS_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "visualize": cmd_visualize, "noise-stats": cmd_noise_stats}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"conceptgan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckpointError, FileNotFoundError, OSError, ValueError, FloatingPointError) as exc:
        print(f"conceptgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
