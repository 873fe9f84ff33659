"""Load, filter and synthesize half-hourly household energy data.

Understands the Ausgrid solar-home CSV layout (one row per customer,
consumption category and date, with 48 half-hour value columns), an internal
columnar format for fast reload, Monday-anchored complete-week filtering,
seeded train/test splitting, and a synthetic trace generator used by tests
and desk-scale experiments.

All energy values are kWh per half-hour slot. Slot ``i`` covers the half hour
starting ``i * 30`` minutes after midnight, so slot 0 is 00:00-00:30 and slot
47 is 23:30-24:00. The CSV columns are labelled by the *end* of the interval
(``0:30`` ... ``23:30``, ``0:00``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta

import numpy as np

from .errors import (
    ConfigError,
    DuplicateError,
    FormatError,
    NotFoundError,
    ValidationError,
)

SLOTS_PER_DAY = 48
SLOTS_PER_WEEK = 7 * SLOTS_PER_DAY

CATEGORIES = ("GC", "CL", "GG")


def slot_label(slot: int) -> str:
    """CSV column label for a slot: the interval's end time, '0:30' ... '0:00'."""
    minutes = 30 * (slot + 1)
    return f"{(minutes // 60) % 24}:{minutes % 60:02d}"


SLOT_LABELS = tuple(slot_label(i) for i in range(SLOTS_PER_DAY))

AUSGRID_FIXED_COLUMNS = (
    "Customer",
    "Generator Capacity",
    "Postcode",
    "Consumption Category",
    "date",
)
AUSGRID_HEADER = AUSGRID_FIXED_COLUMNS + SLOT_LABELS
AUSGRID_QUALITY_COLUMN = "Row Quality"


@dataclass(frozen=True)
class HalfHourRecord:
    """One half-hour reading: general consumption, controlled load, solar output."""

    day: date
    slot: int
    gc: float
    cl: float
    cs: float

    def __post_init__(self):
        if not 0 <= self.slot < SLOTS_PER_DAY:
            raise ValidationError(f"slot {self.slot} outside [0, {SLOTS_PER_DAY - 1}]")
        for name in ("gc", "cl", "cs"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name}={v!r} on {self.day} slot {self.slot} must be finite and >= 0")

    @property
    def start_time(self) -> datetime:
        minutes = 30 * self.slot
        return datetime(self.day.year, self.day.month, self.day.day, minutes // 60, minutes % 60)

    def sort_key(self):
        return (self.day, self.slot)


@dataclass(frozen=True)
class WeekTrace:
    """A complete Monday-to-Sunday week: exactly 336 contiguous records."""

    start_date: date
    records: tuple[HalfHourRecord, ...]

    def __post_init__(self):
        if self.start_date.weekday() != 0:
            raise ValidationError(f"week start {self.start_date} is not a Monday")
        if len(self.records) != SLOTS_PER_WEEK:
            raise ValidationError(f"week has {len(self.records)} records, expected {SLOTS_PER_WEEK}")
        for k, rec in enumerate(self.records):
            expected_day = self.start_date + timedelta(days=k // SLOTS_PER_DAY)
            if rec.day != expected_day or rec.slot != k % SLOTS_PER_DAY:
                raise ValidationError(
                    f"record {k} is {rec.day} slot {rec.slot}, expected {expected_day} slot {k % SLOTS_PER_DAY}"
                )


@dataclass(frozen=True)
class DataSplit:
    train: tuple[WeekTrace, ...]
    test: tuple[WeekTrace, ...]
    seed: int


def parse_ausgrid_csv(stream) -> dict[int, list[HalfHourRecord]]:
    """Parse an Ausgrid-layout CSV into per-customer chronological records.

    Rows of the GC / CL / GG categories for the same customer and date are
    merged into 48 records; GG becomes ``cs``. A date with no CL row gets
    cl = 0 (households without a controlled-load meter). Empty value cells
    are read as 0.
    """
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError("input is empty, expected the Ausgrid header row") from None
    header = [h.strip() for h in header]
    if len(header) == len(AUSGRID_HEADER) + 1 and header[-1] == AUSGRID_QUALITY_COLUMN:
        header = header[:-1]
    if tuple(header) != AUSGRID_HEADER:
        raise FormatError(
            "malformed header: expected "
            f"'{','.join(AUSGRID_HEADER[:6])},...,{AUSGRID_HEADER[-1]}'"
        )

    # (customer, date) -> category -> 48 values
    by_day: dict[tuple[int, date], dict[str, list[float]]] = {}
    n_cols = len(AUSGRID_HEADER)
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (n_cols, n_cols + 1):
            raise FormatError(f"row {line_no}: expected {n_cols} or {n_cols + 1} columns, got {len(row)}")
        try:
            customer = int(row[0])
        except ValueError:
            raise ValidationError(f"row {line_no}: customer id {row[0]!r} is not an integer") from None
        category = row[3].strip()
        if category not in CATEGORIES:
            raise ValidationError(f"row {line_no}: unknown consumption category {category!r}")
        try:
            day = datetime.strptime(row[4].strip(), "%d/%m/%Y").date()
        except ValueError:
            raise ValidationError(f"row {line_no}: date {row[4]!r} is not D/M/YYYY") from None
        values = []
        for j, cell in enumerate(row[5:5 + SLOTS_PER_DAY]):
            cell = cell.strip()
            if cell == "":
                values.append(0.0)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(
                    f"row {line_no}, column '{SLOT_LABELS[j]}': {cell!r} is not a number"
                ) from None
            if not math.isfinite(v) or v < 0:
                raise ValidationError(
                    f"row {line_no}, column '{SLOT_LABELS[j]}': value {cell} must be finite and >= 0"
                )
            values.append(v)
        cats = by_day.setdefault((customer, day), {})
        if category in cats:
            raise DuplicateError(
                f"row {line_no}: duplicate {category} row for customer {customer} on {row[4].strip()}"
            )
        cats[category] = values

    out: dict[int, list[HalfHourRecord]] = {}
    zeros = [0.0] * SLOTS_PER_DAY
    for (customer, day), cats in by_day.items():
        gc = cats.get("GC", zeros)
        cl = cats.get("CL", zeros)
        cs = cats.get("GG", zeros)
        recs = out.setdefault(customer, [])
        for slot in range(SLOTS_PER_DAY):
            recs.append(HalfHourRecord(day, slot, gc[slot], cl[slot], cs[slot]))
    for recs in out.values():
        recs.sort(key=HalfHourRecord.sort_key)
    return out


def write_ausgrid_csv(data: dict[int, list[HalfHourRecord]], stream, generator_capacity="", postcode="") -> None:
    """Serialize records back to the Ausgrid layout (inverse of parse_ausgrid_csv).

    A CL row is only written for dates with any nonzero controlled load, so a
    parse -> write -> parse round trip reproduces the records exactly.
    """
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(AUSGRID_HEADER)
    for customer in sorted(data):
        by_day: dict[date, list[HalfHourRecord]] = {}
        for rec in data[customer]:
            by_day.setdefault(rec.day, []).append(rec)
        for day in sorted(by_day):
            recs = sorted(by_day[day], key=HalfHourRecord.sort_key)
            if len(recs) != SLOTS_PER_DAY:
                raise ValidationError(
                    f"customer {customer} on {day}: {len(recs)} records; the row layout "
                    f"can only express complete days of {SLOTS_PER_DAY} slots"
                )
            day_str = f"{day.day}/{day.month}/{day.year}"
            rows = [("GC", [r.gc for r in recs])]
            if any(r.cl != 0.0 for r in recs):
                rows.append(("CL", [r.cl for r in recs]))
            rows.append(("GG", [r.cs for r in recs]))
            for category, values in rows:
                writer.writerow(
                    [customer, generator_capacity, postcode, category, day_str]
                    + [repr(v) for v in values]
                )


def write_normalized(records: list[HalfHourRecord], stream) -> None:
    """Write the internal columnar format: timestamp,gc,cl,cs (one household)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["timestamp", "gc", "cl", "cs"])
    for rec in records:
        writer.writerow([rec.start_time.strftime("%Y-%m-%dT%H:%M"), repr(rec.gc), repr(rec.cl), repr(rec.cs)])


def read_normalized(stream) -> list[HalfHourRecord]:
    """Read the internal columnar format written by write_normalized."""
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != ["timestamp", "gc", "cl", "cs"]:
        raise FormatError("malformed header: expected 'timestamp,gc,cl,cs'")
    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise FormatError(f"row {line_no}: expected 4 columns, got {len(row)}")
        try:
            ts = datetime.strptime(row[0].strip(), "%Y-%m-%dT%H:%M")
        except ValueError:
            raise ValidationError(f"row {line_no}: bad timestamp {row[0]!r}") from None
        slot = (ts.hour * 60 + ts.minute) // 30
        if ts.minute % 30 != 0:
            raise ValidationError(f"row {line_no}: timestamp {row[0]!r} not on a half-hour boundary")
        try:
            gc, cl, cs = (float(c) for c in row[1:4])
        except ValueError:
            raise ValidationError(f"row {line_no}: non-numeric value") from None
        records.append(HalfHourRecord(ts.date(), slot, gc, cl, cs))
    records.sort(key=HalfHourRecord.sort_key)
    return records


def select_household(data: dict[int, list[HalfHourRecord]], customer: int) -> list[HalfHourRecord]:
    """Return the chronologically sorted records of one customer."""
    if customer not in data:
        known = ", ".join(str(c) for c in sorted(data))
        raise NotFoundError(f"customer {customer} not in data (have: {known})")
    return sorted(data[customer], key=HalfHourRecord.sort_key)


def filter_complete_weeks(records: list[HalfHourRecord], year: int | None = None) -> list[WeekTrace]:
    """Keep only Monday-anchored weeks in which all 336 slots are present.

    With ``year`` given, a week qualifies only if all seven days fall within
    that calendar year. Partial weeks are dropped silently.
    """
    by_week: dict[date, dict[tuple[int, int], HalfHourRecord]] = {}
    for rec in records:
        monday = rec.day - timedelta(days=rec.day.weekday())
        by_week.setdefault(monday, {})[((rec.day - monday).days, rec.slot)] = rec
    weeks = []
    for monday in sorted(by_week):
        if year is not None and (monday.year != year or (monday + timedelta(days=6)).year != year):
            continue
        cells = by_week[monday]
        if len(cells) != SLOTS_PER_WEEK:
            continue
        ordered = tuple(cells[(d, s)] for d in range(7) for s in range(SLOTS_PER_DAY))
        weeks.append(WeekTrace(monday, ordered))
    return weeks


def split_train_test(weeks: list[WeekTrace], n_train: int, seed: int) -> DataSplit:
    """Uniformly random disjoint split into n_train training weeks and the rest."""
    if not 0 < n_train < len(weeks):
        raise ConfigError(f"n_train={n_train} must be in (0, {len(weeks)}) for {len(weeks)} weeks")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(weeks))
    train_idx = sorted(perm[:n_train].tolist())
    test_idx = sorted(perm[n_train:].tolist())
    return DataSplit(
        train=tuple(weeks[i] for i in train_idx),
        test=tuple(weeks[i] for i in test_idx),
        seed=seed,
    )


@dataclass(frozen=True)
class SyntheticProfile:
    """Shape parameters for generated weeks.

    Solar is a half-sine over the daylight hours, demand has a morning and an
    evening peak, and controlled load runs only in the 23:00-8:00 night
    window. ``noise`` scales per-slot Gaussian jitter; with noise=0 output is
    independent of the seed. ``quantize`` > 0 rounds every value to that kWh
    step, which the oracle tests use to make lattice dynamics exact.
    """

    peak_solar: float = 0.7
    base_demand: float = 0.18
    morning_peak: float = 0.25
    evening_peak: float = 0.55
    cl_demand: float = 0.25
    noise: float = 0.03
    quantize: float = 0.0
    start: date = date(2013, 1, 7)

    def __post_init__(self):
        for name in ("peak_solar", "base_demand", "morning_peak", "evening_peak", "cl_demand", "noise", "quantize"):
            if getattr(self, name) < 0:
                raise ConfigError(f"synthetic profile {name} must be >= 0")
        if self.start.weekday() != 0:
            raise ConfigError(f"synthetic start {self.start} must be a Monday")


_SUNRISE = 7.0
_SUNSET = 18.0
_NIGHT_START_SLOT = 46  # 23:00
_NIGHT_END_SLOT = 16    # 08:00


def _quantized(v: float, q: float) -> float:
    if q <= 0:
        return v
    return round(v / q) * q


def generate_synthetic_weeks(n: int, profile: SyntheticProfile | None = None, seed: int = 0) -> list[WeekTrace]:
    """Generate n synthetic complete weeks, deterministic for a given seed."""
    if n < 0:
        raise ConfigError("n must be >= 0")
    profile = profile or SyntheticProfile()
    rng = np.random.default_rng(seed)
    weeks = []
    for w in range(n):
        monday = profile.start + timedelta(weeks=w)
        records = []
        for d in range(7):
            day = monday + timedelta(days=d)
            for slot in range(SLOTS_PER_DAY):
                t = (slot + 0.5) / 2.0  # slot midpoint in hours
                if _SUNRISE < t < _SUNSET:
                    sun = math.sin(math.pi * (t - _SUNRISE) / (_SUNSET - _SUNRISE))
                    cs = profile.peak_solar * sun * (1.0 + profile.noise * rng.standard_normal())
                else:
                    cs = 0.0
                gc = (
                    profile.base_demand
                    + profile.morning_peak * math.exp(-0.5 * ((t - 7.5) / 1.0) ** 2)
                    + profile.evening_peak * math.exp(-0.5 * ((t - 18.5) / 1.5) ** 2)
                    + profile.noise * rng.standard_normal()
                )
                if slot >= _NIGHT_START_SLOT or slot < _NIGHT_END_SLOT:
                    cl = profile.cl_demand * (1.0 + profile.noise * rng.standard_normal())
                else:
                    cl = 0.0
                records.append(
                    HalfHourRecord(
                        day,
                        slot,
                        _quantized(max(0.0, gc), profile.quantize),
                        _quantized(max(0.0, cl), profile.quantize),
                        _quantized(max(0.0, cs), profile.quantize),
                    )
                )
        weeks.append(WeekTrace(monday, tuple(records)))
    return weeks
