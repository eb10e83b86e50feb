"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 data / file error,
3 numeric failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import FETCH_HINT, load_mnist
from .errors import CheckpointError, ConfigError, DataError, NumericError, ShapeError
from .experiments import RUNNERS, ExperimentConfig, dump_feature_maps, run_train, write_report
from .models import Network
from .nn.functional import steps_to_global
from .train import evaluate

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _seed_list(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _common(p: argparse.ArgumentParser, out_default: str | None) -> None:
    p.add_argument("--data-dir", help="directory with the MNIST IDX files (default: $MNIST_DATA_DIR)")
    p.add_argument("--seed", type=int, help="single seed (shorthand for --seeds N)")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, e.g. 1,2,3")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--subset", type=int, help="train on the first N images of the seeded split")
    p.add_argument("--test-subset", type=int, help="evaluate on the first N test images")
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--out", default=out_default, help="report path (JSON)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xycoord", description="XY-coordinate channels for digit recognition")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one network and save a checkpoint")
    _common(p, None)
    p.add_argument("--coords", type=_on_off, default=True, metavar="on|off")
    p.add_argument("--checkpoint", default="model.ckpt")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the MNIST test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--coords", type=_on_off, metavar="on|off", help="defaults to the checkpoint's input channels")
    p.add_argument("--test-subset", type=int)
    p.add_argument("--out")

    p = sub.add_parser("exp", help="run an experiment")
    p.add_argument("experiment", choices=sorted(RUNNERS))
    _common(p, None)
    p.add_argument("--tau", type=float, default=1e-6, help="blank feature-map variance threshold")

    p = sub.add_parser("dump-features", help="export first-layer feature maps of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--layer", default="conv1")
    p.add_argument("--samples", type=int, default=16)
    p.add_argument("--tau", type=float, default=1e-6)
    p.add_argument("--out-dir", default="features")

    p = sub.add_parser("steps-to-global", help="layers needed for a global receptive field")
    p.add_argument("--n", type=int, required=True, help="input extent")
    p.add_argument("--s", type=int, required=True, help="kernel size")
    p.add_argument("--k", type=int, required=True, help="pooling stride")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    if args.seed is not None and args.seeds is not None:
        raise ConfigError("use either --seed or --seeds, not both")
    seeds = args.seeds or ((args.seed,) if args.seed is not None else (1,))
    kw = dict(seeds=seeds, epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, optimizer=args.optimizer,
              precision=args.precision, subset=args.subset, test_subset=args.test_subset, patience=args.patience)
    if getattr(args, "tau", None) is not None:
        kw["tau"] = args.tau
    return ExperimentConfig(**kw)


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _cmd_train(args) -> int:
    report = run_train(_experiment_config(args), args.coords, args.checkpoint, data_dir=args.data_dir)
    if args.out:
        write_report(report, args.out)
    (variant,) = report["variants"].values()
    test = variant["runs"][0]["test"]
    print(f"test accuracy {test['accuracy']:.4f}; checkpoint {args.checkpoint}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    if not isinstance(net, Network):
        raise ConfigError("eval needs a classifier checkpoint")
    use_coords = net.spec.input_channels == 3 if args.coords is None else args.coords
    data = load_mnist(args.data_dir)
    metrics = evaluate(net, data.test_split(args.test_subset), use_coords).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, sort_keys=True, indent=2) + "\n")
    _print_json(metrics)
    return EXIT_OK


def _cmd_exp(args) -> int:
    cfg = _experiment_config(args)
    out = args.out or f"{args.experiment}_report.json"
    report = RUNNERS[args.experiment](cfg, out=out, data_dir=args.data_dir)
    write_report(report, out)
    for line in report["observations"]:
        print(line)
    print(f"report written to {out}")
    return EXIT_OK


def _cmd_dump(args) -> int:
    data = load_mnist(args.data_dir)
    if args.samples < 1:
        raise ConfigError("--samples must be positive")
    dump = dump_feature_maps(args.checkpoint, data.test_images[:args.samples], args.layer, args.tau, args.out_dir)
    summary = dump.to_dict()
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(args.out_dir) / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"blank_count {dump.blank_count} of {len(dump.variances)} filters ({dump.activation})")
    return EXIT_OK


def _cmd_steps(args) -> int:
    try:
        print(steps_to_global(args.n, args.s, args.k))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return EXIT_OK


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "exp": _cmd_exp, "dump-features": _cmd_dump,
            "steps-to-global": _cmd_steps}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        if FETCH_HINT not in str(exc):
            print(FETCH_HINT, file=sys.stderr)
        return EXIT_DATA
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ShapeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
