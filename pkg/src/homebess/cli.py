"""Command-line surface for the dispatch pipeline.

Verbs: ingest raw meter CSVs, train an agent, evaluate a checkpoint, run the
battery-size sweep, run the hyperparameter search, compute oracle costs, and
export plot data plus rendered figures. Every run writes a manifest with the
resolved configuration and all seeds; feeding a manifest back as --config
reproduces the run. Exit status 0 on success, 2 for configuration problems
(the offending key or missing file is named), 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, experiment, plots
from .ddpg import load_checkpoint
from .errors import ConfigError, HomebessError
from .ingest import (
    filter_complete_weeks,
    parse_ausgrid_csv,
    select_household,
    write_normalized,
)
from .runconfig import RunConfig, apply_overrides, load_config, write_manifest

OUT_ROOT_ENV = "HOMEBESS_OUT_ROOT"


def _default_out(verb: str) -> Path:
    root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
    return root / f"{verb}-{time.strftime('%Y%m%d-%H%M%S')}"


def _resolved_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return apply_overrides(cfg, args.set or [])


def _add_common(parser, config_required=False):
    parser.add_argument("--config", required=config_required, help="run configuration YAML (or a manifest)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="dotted-path config override, e.g. env.capacity=1.5")
    parser.add_argument("--out", help="output directory (default: $%s/<verb>-<timestamp>)" % OUT_ROOT_ENV)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homebess", description=__doc__)
    parser.add_argument("--version", action="version", version=f"homebess {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="parse a raw meter CSV into the normalized per-household format")
    p.add_argument("--input", required=True, help="Ausgrid-layout CSV file")
    p.add_argument("--customer", required=True, type=int)
    p.add_argument("--year", type=int, default=None)
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("train", help="train one agent")
    _add_common(p)

    p = sub.add_parser(
        "eval",
        help="evaluate a checkpoint on the configured test weeks "
             "(the checkpoint's own environment config governs the rollout)",
    )
    p.add_argument("--checkpoint", required=True)
    _add_common(p)

    p = sub.add_parser("sweep", help="battery-size sweep: train per size, tabulate vs oracles")
    _add_common(p)

    p = sub.add_parser("tune", help="hyperparameter search with ranked output")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1, help="parallel trial processes")

    p = sub.add_parser("oracle", help="no-battery / greedy / perfect-foresight costs per week")
    _add_common(p)

    p = sub.add_parser("export-plots", help="emit plot datasets and rendered figures from a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", help="output directory (default: <run-dir>/plots)")
    p.add_argument("--capacity", type=float, default=None,
                   help="battery size whose settlements feed the daily profile (sweep runs)")

    return parser


def _cmd_ingest(args) -> int:
    out = Path(args.out) if args.out else _default_out("ingest")
    out.mkdir(parents=True, exist_ok=True)
    try:
        with open(args.input, "r", encoding="utf-8", newline="") as fh:
            first = fh.readline()
            text = first + fh.read() if first.startswith("Customer,") else fh.read()
    except FileNotFoundError:
        raise ConfigError(f"input file not found: {args.input}") from None
    write_manifest(out / "manifest.yaml", "ingest", RunConfig(),
                   {"input": str(args.input), "customer": args.customer, "year": args.year})
    parsed = parse_ausgrid_csv(io.StringIO(text))
    records = select_household(parsed, args.customer)
    weeks = filter_complete_weeks(records, args.year)
    out_file = out / f"customer-{args.customer}.csv"
    with open(out_file, "w", encoding="utf-8", newline="") as fh:
        write_normalized(records, fh)
    year_note = f" in {args.year}" if args.year else ""
    print(f"ingest: customer {args.customer}: {len(records)} records, "
          f"{len(weeks)} complete weeks{year_note} -> {out_file}")
    return 0


def _cmd_train(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out) if args.out else _default_out("train")
    ckpt, result = experiment.run_training(cfg, out_dir=out)
    print(f"train: status={result.status} mean_episode_reward={result.mean_episode_reward:.4f} "
          f"steps={result.training_curve[-1][0] if result.training_curve else 0} -> {out}")
    return 0


def _cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = load_checkpoint(path)
    if args.config is None and (path.parent / "manifest.yaml").is_file():
        # no config given: evaluate on the data the checkpoint was trained for
        args.config = str(path.parent / "manifest.yaml")
    cfg = _resolved_config(args)
    weeks = experiment.load_split(cfg.data).test
    out = Path(args.out) if args.out else _default_out("eval")
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", "eval", cfg, {"checkpoint": str(path)})
    mean_reward, per_week = experiment.evaluate(ckpt, weeks, out_dir=out / "eval")
    for week, reward in zip(weeks, per_week):
        print(f"eval: week {week.start_date.isoformat()} episode_reward={reward:.4f}")
    print(f"eval: mean_episode_reward={mean_reward:.4f} over {len(per_week)} weeks -> {out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out) if args.out else _default_out("sweep")
    sweep = experiment.battery_size_sweep(cfg, out_dir=out)
    for e in sweep.entries:
        print(f"sweep: capacity={e.capacity:g} reward={e.mean_episode_reward:.4f} "
              f"oracle_cost={e.oracle_cost:.4f} no_battery_cost={e.no_battery_cost:.4f}")
    print(f"sweep: {len(sweep.entries)} sizes -> {out / 'sweep_table.csv'}")
    return 0


def _cmd_tune(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out) if args.out else _default_out("tune")
    ranked = experiment.hyperparameter_search(cfg, out_dir=out, workers=args.workers)
    for rank, r in enumerate(ranked, start=1):
        print(f"tune: rank={rank} trial={r.trial_index} lr={r.hyperparams.actor_lr:.6g} "
              f"actor={'x'.join(map(str, r.hyperparams.actor_hiddens))} "
              f"critic={'x'.join(map(str, r.hyperparams.critic_hiddens))} "
              f"reward={r.mean_episode_reward:.4f} status={r.status}")
    print(f"tune: {len(ranked)} trials -> {out / 'ranked_trials.csv'}")
    return 0


def _cmd_oracle(args) -> int:
    cfg = _resolved_config(args)
    out = Path(args.out) if args.out else _default_out("oracle")
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.yaml", "oracle", cfg)
    rows = experiment.oracle_costs(cfg, out_dir=out)
    experiment._write_csv(out / "oracle_table.csv",
                          ("week_start", "no_battery_cost", "greedy_cost", "dp_cost"), rows)
    for start, nb, greedy_cost, dp_cost in rows:
        print(f"oracle: week {start} no_battery={nb:.2f} greedy={greedy_cost:.2f} dp={dp_cost:.2f}")
    print(f"oracle: mean dp cost {float(np.mean([r[3] for r in rows])):.2f} "
          f"over {len(rows)} weeks -> {out / 'oracle_table.csv'}")
    return 0


def _cmd_export_plots(args) -> int:
    out = Path(args.out) if args.out else None
    written = plots.export_plots(args.run_dir, out_dir=out, profile_capacity=args.capacity)
    write_manifest(written[0].parent / "manifest.yaml", "export-plots", RunConfig(),
                   {"run_dir": str(args.run_dir), "capacity": args.capacity})
    for path in written:
        print(f"export-plots: wrote {path}")
    return 0


_HANDLERS = {
    "ingest": _cmd_ingest,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "tune": _cmd_tune,
    "oracle": _cmd_oracle,
    "export-plots": _cmd_export_plots,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.verb](args)
    except ConfigError as exc:
        print(f"ERROR ConfigError: {exc}", file=sys.stderr)
        return 2
    except HomebessError as exc:
        print(f"ERROR {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
