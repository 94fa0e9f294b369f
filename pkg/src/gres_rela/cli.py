"""Command-line entry point: generate, train, eval, ablate, gradcheck."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from . import synthdata as sd
from .config import PRESETS, Config
from .errors import GresError, NumericalError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

GRADCHECK_TOLERANCE = 1e-3


def _parse_mix(text: str) -> dict[str, float]:
    keys = {"single": "mix_single", "multi": "mix_multi", "notarget": "mix_notarget"}
    out = {}
    for item in text.split(","):
        name, sep, value = item.partition("=")
        name = name.strip()
        if not sep or name not in keys:
            raise argparse.ArgumentTypeError(f"bad mix entry {item!r}; expected single=..,multi=..,notarget=..")
        try:
            out[keys[name]] = float(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad mix weight {value!r}") from None
    return out


def _load_config(path: str | None, seed: int | None) -> Config:
    config = Config.load(path) if path else Config()
    return config.replace(seed=seed) if seed is not None else config


def cmd_generate(args) -> int:
    scene = sd.SceneConfig(height=args.canvas, width=args.canvas)
    config = sd.DatasetConfig(train=args.train, val=args.val, scene=scene, **(args.mix or {}))
    sd.build_dataset(args.out, config, args.seed)
    print(f"wrote {args.train} train and {args.val} val samples to {args.out}")
    return EXIT_OK


def _run_training(config: Config, args) -> int:
    result = harness.train(config, args.data, args.out, resume=args.resume, on_epoch=lambda e: print(e.line(), flush=True))
    best = "n/a" if result.best_val_giou is None else f"{result.best_val_giou:.4f}"
    print(f"best epoch {result.best_epoch} val_giou={best}; checkpoint {Path(args.out) / harness.MODEL_FILE}")
    return EXIT_OK


def cmd_train(args) -> int:
    return _run_training(_load_config(args.config, args.seed), args)


def cmd_ablate(args) -> int:
    return _run_training(_load_config(args.config, args.seed).with_preset(args.preset), args)


def cmd_eval(args) -> int:
    report = harness.evaluate(args.checkpoint, args.data, args.split, args.mode)
    if args.report:
        report.write(args.report)
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    errors = harness.gradcheck_model(args.seed)
    worst = max(errors, key=errors.get)
    for name in sorted(errors):
        print(f"{name:<24} {errors[name]:.3e}")
    print(f"max relative error {errors[worst]:.3e} ({worst})")
    return EXIT_OK if errors[worst] < GRADCHECK_TOLERANCE else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gres-rela", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--train", type=int, required=True)
    g.add_argument("--val", type=int, required=True)
    g.add_argument("--canvas", type=int, default=48)
    g.add_argument("--mix", type=_parse_mix, default=None, help="e.g. single=0.4,multi=0.3,notarget=0.3")
    g.set_defaults(func=cmd_generate)

    def training_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config", default=None, help="key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--resume", action="store_true", help="continue from state saved in --out")

    t = sub.add_parser("train", help="train a model")
    training_flags(t)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="train an ablation variant")
    a.add_argument("--preset", required=True, choices=sorted(PRESETS))
    training_flags(a)
    a.set_defaults(func=cmd_ablate)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="val")
    e.add_argument("--mode", choices=("classifier", "50pix"), default=None)
    e.add_argument("--report", default=None)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every model parameter")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GresError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
