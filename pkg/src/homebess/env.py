"""Half-hourly solar-battery dispatch simulation.

One step applies a three-part action (solar charge, grid charge, discharge)
to the battery against a half hour of demand and solar data, then settles the
bill. Settlement order:

1. the battery charges from solar, then (inside the controlled-load window)
   from the grid at the controlled tariff;
2. leftover solar serves general demand, then controlled demand (the latter
   can be switched off); surplus solar is spilled at zero revenue;
3. the battery discharges into remaining general demand first (it carries the
   higher tariff), then remaining controlled demand; discharge beyond the
   remaining demand is not withdrawn;
4. whatever demand is left is bought from the grid at the applicable tariff.

Actions are requests in kWh, clipped to feasibility; there is no penalty for
over-asking and no round-trip efficiency loss or rate limit beyond the
capacity itself. The per-step reward is the negated cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, PolicyError, ProtocolError, ValidationError
from .ingest import SLOTS_PER_DAY, HalfHourRecord

SLOT_23H = 46
SLOT_8H = 16

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class EnvConfig:
    capacity: float = 1.0
    tariff_gc: float = 0.27
    tariff_cl: float = 0.10
    window_start_slot: int = SLOT_23H
    window_end_slot: int = SLOT_8H
    solar_serves_cl: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise ConfigError(f"capacity must be > 0, got {self.capacity}")
        if self.tariff_gc < 0 or self.tariff_cl < 0:
            raise ConfigError("tariffs must be >= 0")
        for name in ("window_start_slot", "window_end_slot"):
            s = getattr(self, name)
            if not 0 <= s < SLOTS_PER_DAY:
                raise ConfigError(f"{name}={s} outside [0, {SLOTS_PER_DAY - 1}]")
        if self.window_start_slot == self.window_end_slot:
            raise ConfigError("controlled window must be non-empty (start != end)")


@dataclass(frozen=True)
class BatteryState:
    capacity: float
    charge: float

    def __post_init__(self):
        if not (math.isfinite(self.capacity) and self.capacity > 0):
            raise ValidationError(f"capacity must be > 0, got {self.capacity}")
        if not (math.isfinite(self.charge) and -_FEAS_TOL <= self.charge <= self.capacity + _FEAS_TOL):
            raise ValidationError(f"charge {self.charge} outside [0, {self.capacity}]")


@dataclass(frozen=True)
class Action:
    """Requested energy movements in kWh: solar charge, grid charge, discharge."""

    charge_solar: float
    charge_grid: float
    discharge: float

    def __post_init__(self):
        for name in ("charge_solar", "charge_grid", "discharge"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"action {name}={v!r} must be finite and >= 0")


NULL_ACTION = Action(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Observation:
    """What the agent sees at the start of a step.

    The residual fields are the unmet demand from the *previous* step's
    settlement (zero at episode start); the current step's residuals are only
    known once the action is chosen. ``slot`` is carried for policies that
    need the time of day, but is not part of the seven-feature state vector.
    """

    capacity: float
    charge: float
    gc: float
    cl: float
    cs: float
    residual_cl: float
    residual_gc: float
    slot: int


@dataclass(frozen=True)
class Settlement:
    solar_to_battery: float
    grid_to_battery: float
    solar_to_load: float
    discharge_to_gc: float
    discharge_to_cl: float
    residual_gc: float
    residual_cl: float
    spilled_solar: float
    cost: float


def in_controlled_window(slot: int, start_slot: int = SLOT_23H, end_slot: int = SLOT_8H) -> bool:
    """True iff the slot's start time lies in the half-open window [start, end).

    The default window runs 23:00 to 8:00, so the 23:00 slot is inside and
    the 8:00 slot is the first one outside.
    """
    if not 0 <= slot < SLOTS_PER_DAY:
        raise ValidationError(f"slot {slot} outside [0, {SLOTS_PER_DAY - 1}]")
    if start_slot < end_slot:
        return start_slot <= slot < end_slot
    return slot >= start_slot or slot < end_slot


def clip_action(raw: Action, state: BatteryState, record: HalfHourRecord, in_window: bool) -> Action:
    """Clip requests to what the battery and the step's data admit.

    Solar charge is limited by available solar and headroom; grid charge by
    the headroom left after solar and is zero outside the window; discharge by
    what is stored including this step's charge. Total clipping: any
    non-negative request maps to a feasible action.
    """
    headroom = max(0.0, state.capacity - state.charge)
    charge_solar = min(max(0.0, raw.charge_solar), record.cs, headroom)
    if in_window:
        charge_grid = min(max(0.0, raw.charge_grid), headroom - charge_solar)
    else:
        charge_grid = 0.0
    discharge = min(max(0.0, raw.discharge), state.charge + charge_solar + charge_grid)
    return Action(charge_solar, charge_grid, discharge)


def settle(
    state: BatteryState,
    record: HalfHourRecord,
    clipped: Action,
    config: EnvConfig,
    in_window: bool,
) -> tuple[BatteryState, Settlement]:
    """Apply a clipped action for one half hour and settle the bill.

    ``clipped`` must come from clip_action for the same state and record;
    an infeasible action raises ContractError rather than being silently
    re-clipped.
    """
    headroom = max(0.0, state.capacity - state.charge)
    if clipped.charge_solar > min(record.cs, headroom) + _FEAS_TOL:
        raise ContractError(f"solar charge {clipped.charge_solar} exceeds min(cs, headroom)")
    grid_cap = (headroom - clipped.charge_solar) if in_window else 0.0
    if clipped.charge_grid > grid_cap + _FEAS_TOL:
        raise ContractError(f"grid charge {clipped.charge_grid} infeasible (cap {grid_cap})")
    available = state.charge + clipped.charge_solar + clipped.charge_grid
    if clipped.discharge > available + _FEAS_TOL:
        raise ContractError(f"discharge {clipped.discharge} exceeds stored energy {available}")

    solar_to_battery = clipped.charge_solar
    grid_to_battery = clipped.charge_grid

    residual_solar = record.cs - solar_to_battery
    solar_to_gc = min(residual_solar, record.gc)
    solar_to_cl = min(residual_solar - solar_to_gc, record.cl) if config.solar_serves_cl else 0.0
    spilled = residual_solar - solar_to_gc - solar_to_cl

    rem_gc = record.gc - solar_to_gc
    rem_cl = record.cl - solar_to_cl
    discharge_to_gc = min(clipped.discharge, rem_gc)
    discharge_to_cl = min(clipped.discharge - discharge_to_gc, rem_cl)

    residual_gc = rem_gc - discharge_to_gc
    residual_cl = rem_cl - discharge_to_cl
    cost = (
        config.tariff_gc * residual_gc
        + config.tariff_cl * residual_cl
        + config.tariff_cl * grid_to_battery
    )
    new_charge = state.charge + solar_to_battery + grid_to_battery - discharge_to_gc - discharge_to_cl
    new_charge = min(max(new_charge, 0.0), state.capacity)
    return (
        BatteryState(state.capacity, new_charge),
        Settlement(
            solar_to_battery=solar_to_battery,
            grid_to_battery=grid_to_battery,
            solar_to_load=solar_to_gc + solar_to_cl,
            discharge_to_gc=discharge_to_gc,
            discharge_to_cl=discharge_to_cl,
            residual_gc=residual_gc,
            residual_cl=residual_cl,
            spilled_solar=spilled,
            cost=cost,
        ),
    )


def settle_batch(charges, requests, record: HalfHourRecord, config: EnvConfig, in_window: bool):
    """Vectorized clip + settle over a grid of charges and requests.

    ``charges`` has shape (K,) and ``requests`` (C, 3); broadcasting gives
    per-(state, action) costs and next charges of shape (K, C). Mirrors
    clip_action followed by settle exactly; the backward pass of the
    perfect-foresight solver depends on that equivalence.
    """
    charges = np.asarray(charges, dtype=float)[:, None]
    req = np.asarray(requests, dtype=float)[None, :, :]
    headroom = np.maximum(0.0, config.capacity - charges)
    s2b = np.minimum(np.minimum(req[:, :, 0], record.cs), headroom)
    if in_window:
        g2b = np.minimum(req[:, :, 1], headroom - s2b)
    else:
        g2b = np.zeros_like(s2b)
    discharge = np.minimum(req[:, :, 2], charges + s2b + g2b)

    residual_solar = record.cs - s2b
    solar_to_gc = np.minimum(residual_solar, record.gc)
    if config.solar_serves_cl:
        solar_to_cl = np.minimum(residual_solar - solar_to_gc, record.cl)
    else:
        solar_to_cl = np.zeros_like(s2b)
    rem_gc = record.gc - solar_to_gc
    rem_cl = record.cl - solar_to_cl
    d_gc = np.minimum(discharge, rem_gc)
    d_cl = np.minimum(discharge - d_gc, rem_cl)
    cost = (
        config.tariff_gc * (rem_gc - d_gc)
        + config.tariff_cl * (rem_cl - d_cl)
        + config.tariff_cl * g2b
    )
    new_charge = np.clip(charges + s2b + g2b - d_gc - d_cl, 0.0, config.capacity)
    return cost, new_charge


class BatteryEnv:
    """Episode protocol around clip_action and settle.

    The trace can be a WeekTrace's records or any non-empty record sequence.
    The battery starts empty and residuals start at zero.
    """

    def __init__(self, config: EnvConfig):
        self.config = config
        self._records = None
        self._t = 0
        self._state = None
        self._residual_gc = 0.0
        self._residual_cl = 0.0

    @property
    def done(self) -> bool:
        return self._records is None or self._t >= len(self._records)

    @property
    def state(self) -> BatteryState:
        return self._state

    def reset(self, trace) -> Observation:
        records = list(getattr(trace, "records", trace))
        if not records:
            raise ConfigError("episode trace is empty")
        self._records = records
        self._t = 0
        self._state = BatteryState(self.config.capacity, 0.0)
        self._residual_gc = 0.0
        self._residual_cl = 0.0
        return self._observe()

    def _observe(self) -> Observation:
        if self._t < len(self._records):
            rec = self._records[self._t]
            gc, cl, cs, slot = rec.gc, rec.cl, rec.cs, rec.slot
        else:
            # terminal observation: no next record, kept only for bookkeeping
            gc = cl = cs = 0.0
            slot = (self._records[-1].slot + 1) % SLOTS_PER_DAY
        return Observation(
            capacity=self._state.capacity,
            charge=self._state.charge,
            gc=gc,
            cl=cl,
            cs=cs,
            residual_cl=self._residual_cl,
            residual_gc=self._residual_gc,
            slot=slot,
        )

    def step(self, raw: Action) -> tuple[Observation, float, bool, Settlement]:
        if self._records is None:
            raise ProtocolError("step() before reset()")
        if self.done:
            raise ProtocolError("step() after the episode finished")
        for name in ("charge_solar", "charge_grid", "discharge"):
            v = getattr(raw, name)
            if not math.isfinite(v) or v < 0:
                raise PolicyError(f"action {name}={v!r} must be finite and >= 0")
        record = self._records[self._t]
        in_window = in_controlled_window(
            record.slot, self.config.window_start_slot, self.config.window_end_slot
        )
        clipped = clip_action(raw, self._state, record, in_window)
        self._state, settlement = settle(self._state, record, clipped, self.config, in_window)
        self._residual_gc = settlement.residual_gc
        self._residual_cl = settlement.residual_cl
        self._t += 1
        return self._observe(), -settlement.cost, self.done, settlement


def rollout(config: EnvConfig, trace, policy) -> tuple[float, list[Settlement]]:
    """Run a policy (Observation -> Action) over a trace; return total cost."""
    env = BatteryEnv(config)
    obs = env.reset(trace)
    settlements = []
    while not env.done:
        try:
            action = policy(obs)
        except ValidationError as exc:
            raise PolicyError(str(exc)) from exc
        obs, _, _, settlement = env.step(action)
        settlements.append(settlement)
    return sum(s.cost for s in settlements), settlements


SETTLEMENT_TABLE_HEADER = (
    "timestamp",
    "gc",
    "cl",
    "cs",
    "solar_to_battery",
    "grid_to_battery",
    "solar_to_load",
    "discharge_to_gc",
    "discharge_to_cl",
    "residual_gc",
    "residual_cl",
    "spilled_solar",
    "cost",
    "reward",
    "charge",
)


def settlement_rows(trace, settlements: list[Settlement], charges: list[float]):
    """Flatten an episode into delimited-table rows (one per step).

    ``charges`` holds the end-of-step battery charge. The table is the
    exchange format for daily-profile plotting and oracle comparisons.
    """
    records = list(getattr(trace, "records", trace))
    if not len(records) == len(settlements) == len(charges):
        raise ContractError("trace, settlements and charges lengths differ")
    rows = []
    for rec, s, charge in zip(records, settlements, charges):
        rows.append(
            [
                rec.start_time.strftime("%Y-%m-%dT%H:%M"),
                rec.gc,
                rec.cl,
                rec.cs,
                s.solar_to_battery,
                s.grid_to_battery,
                s.solar_to_load,
                s.discharge_to_gc,
                s.discharge_to_cl,
                s.residual_gc,
                s.residual_cl,
                s.spilled_solar,
                s.cost,
                -s.cost,
                charge,
            ]
        )
    return rows
