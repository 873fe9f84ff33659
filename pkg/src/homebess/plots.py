"""Plot-ready datasets and rendered figures from run directories.

Three views of a run, each written as a tidy delimited file plus a PNG
rendered from exactly that file's rows:

* training curves by battery size (reward vs training iteration),
* test reward vs battery size next to the oracle and no-battery costs,
* the mean +/- std daily profile (48 half-hour slots) of demand, solar,
  battery charge and discharge from the evaluation settlement logs.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import ConfigError
from .ingest import SLOTS_PER_DAY

TRAINING_CURVES_HEADER = ("capacity_kwh", "iteration", "mean_episode_reward")
SIZE_SWEEP_HEADER = ("capacity_kwh", "mean_episode_reward", "oracle_cost", "no_battery_cost")
DAILY_PROFILE_HEADER = ("series", "slot", "mean", "std")
PROFILE_SERIES = ("gc", "solar", "charge", "discharge")

_FIG_DPI = 150


def _read_csv(path: Path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _curve_sources(run_dir: Path):
    """(capacity or None, curve.csv path) pairs found under a run directory."""
    sources = []
    sizes_dir = run_dir / "sizes"
    if sizes_dir.is_dir():
        for size_dir in sorted(sizes_dir.iterdir(), key=lambda p: float(p.name)):
            curve = size_dir / "curve.csv"
            if curve.is_file():
                sources.append((float(size_dir.name), curve))
    elif (run_dir / "curve.csv").is_file():
        sources.append((None, run_dir / "curve.csv"))
    return sources


def training_curves_dataset(run_dir: Path):
    """Long-format training curves: one row per (size, evaluation point)."""
    rows = []
    for capacity, path in _curve_sources(run_dir):
        _, raw = _read_csv(path)
        for iteration, reward in raw:
            rows.append((capacity if capacity is not None else "", int(iteration), float(reward)))
    return rows


def size_sweep_dataset(run_dir: Path):
    table = run_dir / "sweep_table.csv"
    if not table.is_file():
        raise ConfigError(f"missing input: {table}")
    _, raw = _read_csv(table)
    return [(float(c), float(r), float(o), float(n)) for c, r, o, n in raw]


def _settlement_sources(run_dir: Path):
    direct = run_dir / "eval" / "settlements.csv"
    if direct.is_file():
        return {None: direct}
    sizes_dir = run_dir / "sizes"
    out = {}
    if sizes_dir.is_dir():
        for size_dir in sorted(sizes_dir.iterdir(), key=lambda p: float(p.name)):
            path = size_dir / "eval" / "settlements.csv"
            if path.is_file():
                out[float(size_dir.name)] = path
    return out


def daily_profile_dataset(settlements_path: Path):
    """Per-slot mean and std of demand, solar, end-of-step charge, discharge.

    Aggregates across all days in a settlement log; always exactly 48 rows
    per series.
    """
    header, raw = _read_csv(settlements_path)
    col = {name: i for i, name in enumerate(header)}
    per_slot = {name: [[] for _ in range(SLOTS_PER_DAY)] for name in PROFILE_SERIES}
    for row in raw:
        ts = row[col["timestamp"]]
        hour, minute = int(ts[11:13]), int(ts[14:16])
        slot = (hour * 60 + minute) // 30
        per_slot["gc"][slot].append(float(row[col["gc"]]))
        per_slot["solar"][slot].append(float(row[col["cs"]]))
        per_slot["charge"][slot].append(float(row[col["charge"]]))
        per_slot["discharge"][slot].append(
            float(row[col["discharge_to_gc"]]) + float(row[col["discharge_to_cl"]])
        )
    rows = []
    for series in PROFILE_SERIES:
        for slot in range(SLOTS_PER_DAY):
            values = np.array(per_slot[series][slot])
            if len(values) == 0:
                raise ConfigError(f"settlement log has no rows for slot {slot}")
            rows.append((series, slot, float(values.mean()), float(values.std())))
    return rows


def render_training_curves(rows, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_size = {}
    for capacity, iteration, reward in rows:
        by_size.setdefault(capacity, []).append((iteration, reward))
    for capacity, points in sorted(by_size.items(), key=lambda kv: (kv[0] != "", kv[0])):
        points.sort()
        label = f"{capacity:g} kWh" if capacity != "" else "reward"
        ax.plot([p[0] for p in points], [p[1] for p in points], label=label, linewidth=1.2)
    ax.set_xlabel("training iterations")
    ax.set_ylabel("mean episode reward (AUD)")
    ax.grid(alpha=0.3)
    if len(by_size) > 1:
        ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def render_size_sweep(rows, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    caps = [r[0] for r in rows]
    ax.plot(caps, [r[1] for r in rows], "o-", label="agent test reward")
    ax.plot(caps, [-r[2] for r in rows], "s--", label="perfect-foresight reward")
    ax.plot(caps, [-r[3] for r in rows], "^:", label="no-battery reward")
    ax.set_xlabel("battery capacity (kWh)")
    ax.set_ylabel("mean episode reward (AUD)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def render_daily_profile(rows, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    hours = [(s + 0.5) / 2.0 for s in range(SLOTS_PER_DAY)]
    for series in PROFILE_SERIES:
        series_rows = sorted((r for r in rows if r[0] == series), key=lambda r: r[1])
        mean = np.array([r[2] for r in series_rows])
        std = np.array([r[3] for r in series_rows])
        line, = ax.plot(hours, mean, label=series, linewidth=1.3)
        ax.fill_between(hours, mean - std, mean + std, color=line.get_color(), alpha=0.15)
    ax.set_xlabel("hour of day")
    ax.set_ylabel("kWh per half hour")
    ax.set_xlim(0, 24)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_FIG_DPI)
    plt.close(fig)


def export_plots(run_dir, out_dir=None, profile_capacity: float | None = None) -> list[Path]:
    """Build every dataset the run directory supports and render its figure.

    A sweep directory yields all three views; a train/eval directory yields
    the curves and/or the daily profile. Raises ConfigError listing the
    absent inputs when nothing can be produced.
    """
    run = Path(run_dir)
    if not run.is_dir():
        raise ConfigError(f"run directory not found: {run}")
    out = Path(out_dir) if out_dir is not None else run / "plots"
    written: list[Path] = []

    curve_rows = training_curves_dataset(run)
    if curve_rows:
        data_path = out / "training_curves.csv"
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(data_path, TRAINING_CURVES_HEADER, curve_rows)
        render_training_curves(curve_rows, out / "training_curves.png")
        written += [data_path, out / "training_curves.png"]

    if (run / "sweep_table.csv").is_file():
        sweep_rows = size_sweep_dataset(run)
        out.mkdir(parents=True, exist_ok=True)
        data_path = out / "size_sweep.csv"
        _write_csv(data_path, SIZE_SWEEP_HEADER, sweep_rows)
        render_size_sweep(sweep_rows, out / "size_sweep.png")
        written += [data_path, out / "size_sweep.png"]

    settlements = _settlement_sources(run)
    if settlements:
        if None in settlements:
            chosen = settlements[None]
        else:
            target = profile_capacity if profile_capacity is not None else 1.0
            capacity = min(settlements, key=lambda c: abs(c - target))
            chosen = settlements[capacity]
        profile_rows = daily_profile_dataset(chosen)
        out.mkdir(parents=True, exist_ok=True)
        data_path = out / "daily_profile.csv"
        _write_csv(data_path, DAILY_PROFILE_HEADER, profile_rows)
        render_daily_profile(profile_rows, out / "daily_profile.png")
        written += [data_path, out / "daily_profile.png"]

    if not written:
        raise ConfigError(
            "no plottable inputs found; expected one of: "
            f"{run / 'curve.csv'}, {run / 'sizes'}, {run / 'sweep_table.csv'}, "
            f"{run / 'eval' / 'settlements.csv'}"
        )
    return written
