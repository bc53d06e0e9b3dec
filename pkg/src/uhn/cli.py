"""Command-line interface for uhn."""

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import INDEX_ENCODINGS
from .csv_store import SummaryTable
from .experiments import (
    KINDS,
    ExperimentConfig,
    describe_chain,
    evaluate_checkpoint,
    fresh_generator,
    report_counts,
    run_experiment,
)
from .families import FAMILIES
from .initstats import INIT_MODES
from .trainer import TrainingDivergedError


def main(argv=None) -> int:
    """Main entry point."""
    parser = argparse.ArgumentParser(
        description="Universal hypernetwork: generate, train and evaluate weights from descriptors",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  uhn counts --uhn index_freqs=1024 --uhn hidden=64 --task mnist
  uhn train --kind single-model --task toy_image --train-steps 200
  uhn train --config runs/recursive.json --depth 2 --output output/rec-k2
  uhn eval --checkpoint output/single-model-0/checkpoint.npz
  uhn chain --depth 3
  uhn report output/multi-model-0 --plots
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-step values")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    # Counts command
    counts_parser = subparsers.add_parser("counts", help="Print generator, target and baseline parameter counts")
    add_config_flags(counts_parser)

    # Init command
    init_parser = subparsers.add_parser("init", help="Run the initialization phase only, then evaluate")
    add_config_flags(init_parser)

    # Train command
    train_parser = subparsers.add_parser("train", help="Initialize, train and evaluate a generator")
    add_config_flags(train_parser)

    # Eval command
    eval_parser = subparsers.add_parser("eval", help="Evaluate weights generated from a checkpoint")
    eval_parser.add_argument("--checkpoint", type=Path, required=True, help="checkpoint.npz path")
    eval_parser.add_argument("--task", help="Dataset name (default: from the checkpoint)")
    eval_parser.add_argument("--model", help="Named target model (default: from the checkpoint)")
    eval_parser.add_argument("--depth", type=int, help="Recursion depth (default: from the checkpoint)")
    eval_parser.add_argument("--seed", type=int, default=0, help="Seed for synthetic datasets")

    # Chain command
    chain_parser = subparsers.add_parser("chain", help="Generate through a recursion chain and print per-level stats")
    chain_parser.add_argument("--checkpoint", type=Path, help="checkpoint.npz path (default: fresh root)")
    add_config_flags(chain_parser)

    # Report command
    report_parser = subparsers.add_parser("report", help="Print a run's summary table")
    report_parser.add_argument("path", type=Path, help="Artifact directory or summary.csv")
    report_parser.add_argument("--plots", action="store_true", help="Also render PNG plots (needs matplotlib)")

    args = parser.parse_args(argv)
    setup_logging(args.verbose, args.quiet)

    commands = {
        "counts": cmd_counts,
        "init": cmd_init,
        "train": cmd_train,
        "eval": cmd_eval,
        "chain": cmd_chain,
        "report": cmd_report,
    }
    if args.command not in commands:
        parser.print_help()
        return 0
    try:
        return commands[args.command](args)
    except TrainingDivergedError as e:
        print(f"Diverged: {e}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def add_config_flags(p: argparse.ArgumentParser) -> None:
    """Flags mirroring ExperimentConfig; unset flags keep the --config (or default) value."""
    p.add_argument("--config", type=Path, help="JSON experiment config to start from")
    p.add_argument("--kind", choices=KINDS, help="Experiment kind")
    p.add_argument("--name", help="Experiment name used in the summary table")
    p.add_argument("--uhn", action="append", metavar="KEY=VALUE", help="Generator override, repeatable")
    p.add_argument("--index-encoding", choices=INDEX_ENCODINGS, help="Shortcut for --uhn index_encoding=...")
    p.add_argument("--task", help="Dataset name")
    p.add_argument("--model", help="Named target model")
    p.add_argument("--family", choices=FAMILIES, help="Model family for multi-model runs")
    p.add_argument("--model-set-size", type=int, help="|M| for multi-model runs")
    p.add_argument("--model-set-splits", type=int, nargs=4, metavar=("TRAIN", "TEST", "VAL", "HOLDIN"))
    p.add_argument("--task-weight", action="append", metavar="NAME=P", help="Multi-task probability, repeatable")
    p.add_argument("--depth", type=int, help="Recursion depth K")
    p.add_argument("--variant", action="append", help="Ablation variant (encoding or FIELD=VALUE), repeatable")
    p.add_argument("--init-steps", type=int, help="Initialization steps S_init")
    p.add_argument("--steps-per-level", type=int, help="Initialization steps per recursion level")
    p.add_argument("--init-lr", type=float, help="Initialization learning rate")
    p.add_argument("--init-warmup-steps", type=int, help="Initialization warmup steps per level")
    p.add_argument("--init-mode", choices=INIT_MODES, help="Initialization targets")
    p.add_argument("--train-steps", type=int, help="Training steps")
    p.add_argument("--train-epochs", type=int, help="Training epochs (overrides --train-steps)")
    p.add_argument("--train-lr", type=float, help="Training learning rate")
    p.add_argument("--warmup-steps", type=int, help="Training warmup steps")
    p.add_argument("--warmup-epochs", type=int, help="Training warmup epochs")
    p.add_argument("--batch-size", type=int, help="Minibatch size")
    p.add_argument("--clip-norm", type=float, help="Global gradient-norm clip for both phases")
    p.add_argument("--chunk-size", type=int, help="Descriptor rows generated per chunk")
    p.add_argument("--seed", type=int, help="Master seed")
    p.add_argument("--precision", choices=["float64", "float32"], help="Floating-point mode")
    p.add_argument("--output", type=Path, help="Artifact directory")
    p.add_argument("--direct-baseline", action="store_true", default=None, help="Also train the target directly")
    p.add_argument("--log-wall-time", action="store_true", default=None, help="Record wall time in metrics.csv")
    p.add_argument("--plots", action="store_true", default=None, help="Render PNG plots after the run")


def _pairs(items, convert) -> dict:
    result = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"Expected KEY=VALUE, got {item}")
        result[key] = convert(value)
    return result


def _uhn_value(text: str):
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for convert in (int, float):
        try:
            return convert(text)
        except ValueError:
            pass
    return text


def config_from_args(args) -> ExperimentConfig:
    """Start from --config (or defaults) and apply every flag that was given."""
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    values = config.to_dict()
    simple = (
        "kind", "name", "task", "model", "family", "model_set_size", "depth", "init_steps",
        "steps_per_level", "init_lr", "init_warmup_steps", "init_mode", "train_steps", "train_epochs",
        "train_lr", "warmup_steps", "warmup_epochs", "batch_size", "clip_norm", "chunk_size", "seed",
        "precision", "direct_baseline", "log_wall_time", "plots",
    )  # fmt: skip
    for name in simple:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    uhn = {**values["uhn"], **_pairs(args.uhn, _uhn_value)}
    if args.index_encoding:
        uhn["index_encoding"] = args.index_encoding
    values["uhn"] = uhn
    if args.model_set_splits:
        values["model_set_splits"] = list(args.model_set_splits)
    if args.task_weight:
        values["tasks"] = _pairs(args.task_weight, float)
    if args.variant:
        values["variants"] = list(args.variant)
    return ExperimentConfig.from_dict(values)


def _validated(args) -> ExperimentConfig:
    config = config_from_args(args)
    errors = config.validate()
    if errors:
        raise ValueError("; ".join(errors))
    return config


def cmd_counts(args) -> int:
    """Print parameter counts."""
    config = _validated(args)
    rows = report_counts(config)
    width = max(len(r["item"]) for r in rows)
    for row in rows:
        print(f"{row['item']:<{width}}  {row['kind']:<16}  {row['params']:>12,}  {row['detail']}")
    return 0


def _run(config: ExperimentConfig, output) -> int:
    out = run_experiment(config, output)
    for row in SummaryTable.read(out / "summary.csv").rows:
        print(f"{row['experiment']}  {row['task']}  {row['split']}  {row['metric']}={row['value']:.4f}")
    print(f"Artifacts saved to: {out}")
    return 0


def cmd_init(args) -> int:
    """Initialization phase only; the generated weights are still evaluated."""
    config = _validated(args)
    config.train_steps, config.train_epochs = 0, 0
    return _run(config, args.output)


def cmd_train(args) -> int:
    return _run(_validated(args), args.output)


def cmd_eval(args) -> int:
    metric, value = evaluate_checkpoint(args.checkpoint, args.task, args.model, args.depth, args.seed)
    print(f"Checkpoint: {args.checkpoint}")
    print(f"{metric}: {value:.4f}")
    return 0


def cmd_chain(args) -> int:
    """Exit code 2 when any level produces non-finite values."""
    config = config_from_args(args)
    depth = config.depth
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
    else:
        config.kind = "recursive"
        errors = config.validate()
        if errors:
            raise ValueError("; ".join(errors))
        params = fresh_generator(config, depth)
    rows = describe_chain(params, config.task, config.model_name, depth, config.chunk_size)
    for row in rows:
        print(
            f"level {row['level']}  {row['target']:<16}  {row['params']:>10,}  "
            f"mean={row['mean']:+.4e}  std={row['std']:.4e}  finite={row['finite']}"
        )
    return 0 if all(r["finite"] for r in rows) else 2


def cmd_report(args) -> int:
    """Show a summary table."""
    path = args.path / "summary.csv" if args.path.is_dir() else args.path
    if not path.exists():
        raise FileNotFoundError(f"No summary table at {path}")
    table = SummaryTable.read(path)
    print(f"CSV: {path}")
    for row in table.rows:
        print(
            f"{row['experiment']}  {row['kind']}  {row['task']}  {row['model']}  {row['split']}  "
            f"{row['metric']}={row['value']:.4f}  params={row['num_params']}  generator={row['generator_params']}"
        )
    print(f"Rows per split: {table.get_stats()}")
    if args.plots:
        from .plots import plot_run

        for written in plot_run(path.parent):
            print(f"Saved to: {written}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
