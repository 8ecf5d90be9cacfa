"""Command-line interface for running distillation loops and utilities."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import orchestrator
from .config import ConfigError, RunConfig, load_config
from .corpusfilter import filter_pairs, read_manifest, write_manifest
from .orchestrator import OrchestratorError
from .records import RecordError, write_records
from .scenario import config_from_scenario, generate_seed_records, load_scenario


def _print_report_table(summary: dict) -> None:
    rows = summary["iterations"]
    if not rows:
        print("no completed iterations yet")
        return
    print(f"{'iter':>4}  {'assessed':>8}  {'difficult':>9}  {'easy':>6}  "
          f"{'accepted':>8}  {'diff_frac':>9}  {'tuning':>7}  {'cache':>7}")
    for r in rows:
        counts = r["counts"]
        print(f"{r['iteration']:>4}  {counts.get('assessed', 0):>8}  "
              f"{counts.get('difficult', 0):>9}  {counts.get('easy', 0):>6}  "
              f"{counts.get('accepted', 0):>8}  {r['difficult_fraction']:>9.4f}  "
              f"{r['pool_sizes'].get('tuning', 0):>7}  {r['pool_sizes'].get('cache', 0):>7}")


def cmd_init(args) -> int:
    config = load_config(args.config)
    orchestrator.init_run(args.seed, config, args.run_dir, force=args.force)
    print(f"initialized run at {args.run_dir}")
    return 0


def cmd_run(args) -> int:
    reports = orchestrator.run(
        args.run_dir,
        max_phases=args.max_phases,
        allow_config_change=args.allow_config_change,
    )
    _print_report_table(orchestrator.report(args.run_dir))
    print(f"completed {len(reports)} iteration(s)")
    return 0


def cmd_iterate(args) -> int:
    phase = orchestrator.iterate(
        args.run_dir, args.phase, allow_config_change=args.allow_config_change
    )
    print(f"executed phase {phase}")
    return 0


def cmd_export(args) -> int:
    path = orchestrator.export_current_pool(args.run_dir, args.out)
    print(f"exported dataset to {path}")
    return 0


def cmd_filter_corpus(args) -> int:
    pairs = read_manifest(args.input)
    selected = filter_pairs(pairs, min_freq=args.min_freq, cap=args.cap, rng_seed=args.seed)
    write_manifest(selected, args.output)
    print(f"kept {len(selected)}/{len(pairs)} pairs -> {args.output}")
    return 0


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    config = config_from_scenario(scenario)
    if args.iterations is not None:
        config.iterations = args.iterations
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    seed_records = generate_seed_records(config.scenario)
    seed_path = run_dir / "seed.jsonl"
    write_records(seed_records, seed_path)
    orchestrator.init_run(seed_path, config, run_dir, force=args.force)
    if not seed_path.exists():  # --force wipes the directory, keep the seed around
        write_records(seed_records, seed_path)
    orchestrator.run(run_dir)
    _print_report_table(orchestrator.report(run_dir))
    return 0


def cmd_report(args) -> int:
    summary = orchestrator.report(args.run_dir)
    if args.json:
        print(json.dumps(summary["iterations"], indent=2, sort_keys=True))
    else:
        _print_report_table(summary)
    if args.csv:
        Path(args.csv).write_text(summary["csv"], encoding="utf-8")
        print(f"wrote plot data to {args.csv}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codistill",
        description="Competitive distillation loop over multi-modal instruction pools",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="initialize a run directory from a seed dataset")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--seed", required=True, help="seed JSONL (conversations or instructions)")
    p.add_argument("--config", required=True, help="RunConfig JSON file")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("run", help="run the loop from the latest checkpoint")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--max-phases", type=int, default=None,
                   help="stop after this many phase transitions")
    p.add_argument("--allow-config-change", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("iterate", help="execute exactly one phase")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--phase", required=True, choices=list(orchestrator.PHASES))
    p.add_argument("--allow-config-change", action="store_true")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("export", help="export the current tuning pool as training data")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("filter-corpus", help="frequency-filter an image-caption manifest")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--min-freq", type=int, default=3)
    p.add_argument("--cap", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_filter_corpus)

    p = sub.add_parser("simulate", help="run the full loop offline with synthetic agents")
    p.add_argument("--scenario", default="default",
                   help="scenario JSON file, or 'default' for the bundled one")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a run's iterations")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--csv", default=None, help="also write plot data to this CSV path")
    p.add_argument("--json", action="store_true", help="print the full JSON summary")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (OrchestratorError, ConfigError, RecordError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
