"""Command-line entry point: ``bimrl {train,eval,plot,ablate}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..exceptions import ConfigError
from .config import ABLATIONS, dump_config, load_config, parse_overrides
from .plotting import EmptyMetricsError, plot_runs
from .runner import evaluate_checkpoint, run

EXIT_MISSING = 2
EXIT_INVALID = 3


def _add_config_args(p, required=False):
    p.add_argument("config", nargs=None if required else "?", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field (dotted keys for nested fields); repeatable")


def build_parser():
    parser = argparse.ArgumentParser(prog="bimrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train every seed listed in the config")
    _add_config_args(p)
    p.add_argument("--run-root", help="parent directory for the run directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out tasks")
    p.add_argument("checkpoint")
    p.add_argument("--n-tasks", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="refuse unless the checkpoint was trained with this config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out", help="also write the JSON report here")

    p = sub.add_parser("plot", help="plot learning curves of one or more run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--episode", type=int, default=4, choices=range(1, 5))
    p.add_argument("--smooth", type=int, default=1)

    p = sub.add_parser("ablate", help="write the full config and its three ablations")
    _add_config_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train", action="store_true", help="also train each of them")
    p.add_argument("--run-root")
    return parser


def _load(path, overrides):
    return load_config(path, parse_overrides(overrides))


def cmd_train(args):
    cfg = _load(args.config, args.overrides)
    run_dir = run(cfg, args.run_root)
    print(run_dir)
    return 0


def cmd_eval(args):
    expected = _load(args.config, args.overrides).config_hash if args.config else None
    if args.n_tasks < 0:
        raise ConfigError("n_tasks: must be >= 0")
    if not Path(args.checkpoint).is_file():
        raise FileNotFoundError(args.checkpoint)
    report = evaluate_checkpoint(args.checkpoint, n_tasks=args.n_tasks, seed=args.seed, expected_hash=expected)
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def cmd_plot(args):
    for d in args.run_dirs:
        if not Path(d).is_dir():
            raise FileNotFoundError(d)
    n = plot_runs(args.run_dirs, args.out, episode=args.episode, smooth=args.smooth)
    print(f"{args.out}: {n} curve(s)")
    return 0


def cmd_ablate(args):
    base = _load(args.config, args.overrides)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ABLATIONS:
        cfg = base.with_ablation(name)
        path = out / f"{name}.yaml"
        dump_config(cfg, path)
        print(path)
        if args.train:
            print(run(cfg, args.run_root))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "plot": cmd_plot, "ablate": cmd_ablate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(asctime)s %(name)s %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EmptyMetricsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
