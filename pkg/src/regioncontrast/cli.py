"""Command line front end: gen / train / eval / ablate / report.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .contrast import NEGATIVE_SOURCES, STRATEGIES
from .errors import ConfigError, DataError, NumericError
from .gaussdist import DISTANCES
from .harness import (
    ABLATION_AXES,
    CSV_HEADER,
    EXTRACTIONS,
    SETTINGS,
    RunConfig,
    ablate,
    evaluate,
    parse_config,
    train,
    write_report,
)
from .synthworld import WorldConfig, assign_labels, generate_dataset, write_dataset

_CHOICES = {
    "setting": SETTINGS,
    "strategy": STRATEGIES,
    "extraction": EXTRACTIONS,
    "distance": DISTANCES,
    "cov_mode": ("diag", "full"),
    "negative_source": NEGATIVE_SOURCES,
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    for f in dataclasses.fields(RunConfig):
        kind = {"int": int, "float": float}.get(f.type, str)
        p.add_argument(f"--{f.name}", type=kind, default=None,
                       choices=_CHOICES.get(f.name), help=f"default: {f.default}")


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name)
            for f in dataclasses.fields(RunConfig)
            if getattr(args, f.name, None) is not None}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regioncontrast")
    sub = parser.add_subparsers(dest="cmd", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic dataset")
    gen.add_argument("--out", required=True)
    gen.add_argument("--scenes", type=int, default=100)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--setting", choices=SETTINGS, default="onelabel")
    gen.add_argument("--height", type=int, default=48)
    gen.add_argument("--width", type=int, default=64)
    gen.add_argument("--classes", type=int, default=5)
    gen.add_argument("--noise", type=float, default=0.05)

    _add_run_flags(sub.add_parser("train", help="train one configuration"))

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data_dir", required=True)
    ev.add_argument("--split", choices=("train", "val", "all"), default="val")

    ab = sub.add_parser("ablate", help="run an ablation grid")
    _add_run_flags(ab)
    ab.add_argument("--axes", default="strategy,extraction,distance",
                    help=f"comma list from {tuple(ABLATION_AXES)}")

    rep = sub.add_parser("report", help="rebuild report.csv from finished runs")
    rep.add_argument("--out_dir", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.cmd == "gen":
            try:
                wcfg = WorldConfig(h=args.height, w=args.width, n_classes=args.classes,
                                   noise_sigma=args.noise, seed=args.seed).validate()
            except ValueError as e:
                raise ConfigError(str(e)) from e
            scenes = generate_dataset(wcfg, args.scenes)
            assign_labels(scenes, args.setting, args.seed)
            write_dataset(scenes, args.out)
            print(f"wrote {len(scenes)} scenes to {args.out}")
        elif args.cmd == "train":
            cfg = parse_config(args.config, _overrides(args))
            result = train(cfg)
            print(f"checkpoint: {result.checkpoint_path}")
            print(f"metrics: {result.csv_path}")
            if result.records:
                print(CSV_HEADER)
                print(result.records[-1].csv_row())
        elif args.cmd == "eval":
            rec = evaluate(args.checkpoint, args.data_dir, args.split)
            print(CSV_HEADER)
            print(rec.csv_row())
        elif args.cmd == "ablate":
            cfg = parse_config(args.config, _overrides(args))
            axes = [a.strip() for a in args.axes.split(",") if a.strip()]
            path = ablate(cfg, axes, cfg.out_dir)
            print(f"report: {path}")
        else:
            path = write_report(args.out_dir)
            sys.stdout.write(path.read_text())
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 4
    return 0
