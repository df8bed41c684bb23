"""Command-line interface.

Exit codes: 0 success, 1 a verification assertion failed, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..mdp import ModelError
from .config import ConfigError, load_config
from .plots import emit_plot_data
from .runner import compare_initializations, run_experiment
from .verify import SUITES, write_records

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

PIPELINE = {"pretrain": "pretrain", "finetune": "finetune", "eval": "evaluate", "run": "evaluate"}
VERIFY = {"verify-theorem": ("theorem",), "verify-geometry": ("geometry",), "verify-skills": ("skills",),
          "verify": ("geometry", "theorem", "skills")}


def parse_seeds(text: str) -> list:
    """``"0-19"`` or ``"0,3,7"`` (ranges inclusive)."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        seeds.extend(range(int(lo), int(hi) + 1) if sep else [int(lo)])
    if not seeds:
        raise ValueError("empty seed list")
    return seeds


def _global_flags(parser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None), help="override the config seed")
    parser.add_argument("--config", default=default(None), help="experiment config (INI)")
    parser.add_argument("--out-dir", default=default("runs"), help="output directory (default: runs)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker processes for multi-seed runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="peaclab", description="Cross-embodiment pre-training bench.")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("pretrain", "reward-free pre-training"),
                       ("finetune", "pre-training then fine-tuning"),
                       ("eval", "full pipeline up to evaluation")):
        sub.add_parser(name, parents=[common], help=text)
    run = sub.add_parser("run", parents=[common], help="full pipeline; with --seeds also the init comparison")
    run.add_argument("--seeds", help="seed list such as 0-19; writes comparison.json/.csv")
    for name in VERIFY:
        sub.add_parser(name, parents=[common], help=f"run the {' + '.join(VERIFY[name])} oracle suite(s)")
    plot = sub.add_parser("emit-plot", parents=[common], help="wide CSV of one metric across runs")
    plot.add_argument("--runs", nargs="+", required=True, help="run directories")
    plot.add_argument("--metric", required=True)
    plot.add_argument("--output", required=True)
    plot.add_argument("--stage", default=None)
    return parser


def _pipeline(args) -> int:
    if not args.config:
        print(f"error: {args.command} needs --config", file=sys.stderr)
        return EXIT_USAGE
    cfg = load_config(args.config)
    if args.command == "run" and args.seeds:
        try:
            seeds = parse_seeds(args.seeds)
        except ValueError as exc:
            print(f"error: bad --seeds: {exc}", file=sys.stderr)
            return EXIT_USAGE
        report = compare_initializations(cfg, seeds, args.out_dir, args.threads, log=print)
        print(f"mean pretrained {report['mean_pretrained']:.6g} vs random {report['mean_random']:.6g} "
              f"(difference {report['mean_difference']:.6g}); table in {Path(args.out_dir) / 'comparison.csv'}")
        return EXIT_OK
    _, record = run_experiment(cfg, args.seed, args.out_dir, PIPELINE[args.command], log=print)
    print(f"run {record.run_id}: {record.dir}")
    return EXIT_OK


def _verify(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    ok_all = True
    for suite in VERIFY[args.command]:
        ok, records = SUITES[suite](seed=seed)
        path = out / f"verify-{suite}.jsonl"
        write_records(path, records)
        failed = sum(not r["passed"] for r in records)
        print(f"{suite}: {'PASS' if ok else 'FAIL'} ({len(records) - failed}/{len(records)} checks) -> {path}")
        ok_all &= ok
    return EXIT_OK if ok_all else EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command in PIPELINE:
            return _pipeline(args)
        if args.command in VERIFY:
            return _verify(args)
        emit_plot_data(args.runs, args.metric, args.output, args.stage)
        print(f"wrote {args.output}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
