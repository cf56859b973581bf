"""``insertbench`` command line.

Exit codes: 0 success, 2 configuration or file-format error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments as ex
from .collector import read_dataset, write_dataset
from .config import BenchConfig, load_config
from .errors import FormatError, InsertBenchError
from .regressor import load_params, save_params

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _config(args) -> BenchConfig:
    cfg = load_config(args.config) if args.config else BenchConfig()
    if args.seed is not None:
        cfg.with_seed(args.seed)
    return cfg


def cmd_collect(args, cfg):
    data = ex.collect(cfg, threads=args.threads)
    write_dataset(data, args.out)
    ex.write_config_snapshot(cfg.to_dict(), args.out)
    print(f"collected {len(data)} samples for {cfg.task_spec().task_id} -> {args.out}")


def cmd_train(args, cfg):
    data = read_dataset(args.data)
    params = ex.fit(cfg, data)
    save_params(params, args.out)
    ex.write_config_snapshot(cfg.to_dict(), args.out)
    print(f"trained on {len(data)} samples -> {args.out}")


def _report(args, rep):
    ex.write_report(rep, args.out)
    for r in rep.rows:
        print(",".join(ex._fmt(r[k]) for k in rep.header))


def cmd_eval(args, cfg):
    _report(args, ex.run_eval(cfg, load_params(args.params), args.trials, args.threads))


def cmd_curve(args, cfg):
    data = read_dataset(args.data) if args.data else None
    _report(args, ex.run_curve(cfg, data, args.trials, args.threads))


def cmd_generalize(args, cfg):
    aug = load_params(args.params) if args.params else None
    plain = load_params(args.params_plain) if args.params_plain else None
    _report(args, ex.run_generalize(cfg, aug, plain, trials=args.trials, threads=args.threads))


def cmd_transfer(args, cfg):
    src = load_params(args.params) if args.params else None
    _report(args, ex.run_transfer(cfg, src, trials=args.trials, threads=args.threads))


def cmd_assembly(args, cfg):
    params = load_params(args.params) if args.params else None
    _report(args, ex.run_assembly(cfg, params, threads=args.threads))


def cmd_localize_demo(args, cfg):
    _report(args, ex.run_localize_demo(cfg, args.trials or 20))


COMMANDS = {
    "collect": (cmd_collect, "run backward data collection"),
    "train": (cmd_train, "train the residual network on a dataset"),
    "eval": (cmd_eval, "closed-loop success rate of a trained policy"),
    "curve": (cmd_curve, "success rate against number of training samples"),
    "generalize": (cmd_generalize, "board pose, peg color and peg shape changes"),
    "transfer": (cmd_transfer, "fine-tuning versus training from scratch on a new task"),
    "assembly": (cmd_assembly, "localize a board and insert every part"),
    "localize-demo": (cmd_localize_demo, "recover random board displacements"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insertbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON config document")
        p.add_argument("--seed", type=int, help="master seed overriding the config")
        p.add_argument("--out", type=Path, required=True, help="output file")
        p.add_argument("--trials", type=int, help="trials per condition")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        if name in ("train", "curve"):
            p.add_argument("--data", type=Path, required=name == "train", help="dataset file")
        if name in ("eval", "generalize", "transfer", "assembly"):
            p.add_argument("--params", type=Path, required=name == "eval", help="trained parameter file")
        if name == "generalize":
            p.add_argument("--params-plain", type=Path, help="parameters trained without augmentation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _config(args)
    except FormatError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        COMMANDS[args.command][0](args, cfg)
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InsertBenchError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
