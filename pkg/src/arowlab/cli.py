"""Command-line entry point: ``arowlab {train,eval,attack,verify-bounds,sweep}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import runner
from .attacks import AttackError
from .autodiff import NonFiniteError
from .config import ConfigError, load_config
from .data import IdxFormatError
from .risk_oracle import GridBudgetError
from .training import TrainingError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_VIOLATION = 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="arowlab", description="Desk-scale adversarial training lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="override output_dir")
        p.add_argument("--seed", type=int, default=None, help="override the run seed")
        p.add_argument("--quiet", action="store_true", help="only print errors")
        return p

    common(sub.add_parser("train", help="train a model and write checkpoints + metrics.csv"))
    p = common(sub.add_parser("eval", help="standard/robust accuracy and fairness report"))
    p.add_argument("--checkpoint", default=None, help="defaults to <out>/final.ckpt")
    p = common(sub.add_parser("attack", help="write PGD adversarial examples for the eval split"))
    p.add_argument("--checkpoint", default=None, help="defaults to <out>/final.ckpt")
    p.add_argument("--attack", default=None, help="named attack (default: first eval attack)")
    common(sub.add_parser("verify-bounds", help="brute-force check of the robust-risk bounds"))
    p = common(sub.add_parser("sweep", help="train one model per lambda and tabulate accuracies"))
    p.add_argument("--lambdas", type=_floats, required=True, help="e.g. 1,2,4,8")
    p.add_argument("--seeds", type=_ints, default=None, help="average over these seeds, e.g. 0,1,2")
    return parser


def _say(args, msg):
    if not args.quiet:
        print(msg)


def run(args):
    cfg = load_config(args.config, out=args.out, seed=args.seed)
    checkpoint = getattr(args, "checkpoint", None) or os.path.join(cfg.output_dir, "final.ckpt")
    if args.command == "train":
        result = runner.cmd_train(cfg)
        last = result.metrics[-1]
        _say(args, f"trained {cfg.train.epochs} epochs: std_acc={last['std_acc']:.4f} "
                   f"rob_acc={last['rob_acc']:.4f} -> {cfg.output_dir}")
    elif args.command == "eval":
        report = runner.cmd_eval(cfg, checkpoint)
        rob = ", ".join(f"{k}={v:.4f}" for k, v in sorted(report.robust_accuracy.items()))
        _say(args, f"std_acc={report.standard_accuracy:.4f} {rob} wc_acc={report.worst_class_standard:.4f}")
    elif args.command == "attack":
        runner.cmd_attack(cfg, checkpoint, args.attack)
        _say(args, f"adversarial examples written to {cfg.output_dir}")
    elif args.command == "verify-bounds":
        summary = runner.cmd_verify_bounds(cfg)
        _say(args, f"violations: {summary['violations']} binary exactness: {summary['binary_exactness']}")
        if not summary["all_hold"]:
            print("bound violation detected; see bounds_summary.json", file=sys.stderr)
            return EXIT_VIOLATION
    elif args.command == "sweep":
        rows = runner.cmd_sweep(cfg, args.lambdas, args.seeds)
        for lam, std, rob in rows:
            _say(args, f"lambda={lam:g} std_acc={std:.4f} rob_acc={rob:.4f}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, GridBudgetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, AttackError, NonFiniteError, IdxFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
