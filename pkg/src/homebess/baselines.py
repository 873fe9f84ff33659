"""Reference policies and verification anchors for the dispatch environment.

Three cost anchors of increasing strength: the no-battery cost (solar offsets
demand directly, nothing stored), a deterministic greedy heuristic, and a
perfect-foresight dynamic program over a discretized state-of-charge lattice.
A memoized brute-force enumerator over tiny horizons pins the dynamic program
down exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import (
    Action,
    BatteryState,
    EnvConfig,
    Observation,
    clip_action,
    in_controlled_window,
    rollout,
    settle,
    settle_batch,
)
from .errors import ConfigError, ResourceGuardError

# nominal brute-force size ceiling: A**(3T) * K
ENUMERATION_GUARD = 4e9
# hard cap on settle evaluations actually performed by the enumerator
ENUMERATION_CALL_LIMIT = 5_000_000


def no_battery_cost(trace, config: EnvConfig) -> float:
    """Cost of the trace with no storage at all.

    Solar serves general demand in place, and controlled demand too when the
    config routes residual solar there; the remainder is bought at the
    tariffs. Equals the environment rollout of the all-zero policy.
    """
    total = 0.0
    for rec in getattr(trace, "records", trace):
        solar_to_gc = min(rec.cs, rec.gc)
        residual_gc = rec.gc - solar_to_gc
        if config.solar_serves_cl:
            solar_to_cl = min(rec.cs - solar_to_gc, rec.cl)
        else:
            solar_to_cl = 0.0
        residual_cl = rec.cl - solar_to_cl
        total += config.tariff_gc * residual_gc + config.tariff_cl * residual_cl
    return total


def greedy_policy(obs: Observation, in_window: bool) -> Action:
    """Charge everything chargeable, discharge into general demand.

    Solar charge asks for the full headroom (the environment clips it to the
    available solar); discharge asks for the general demand left after the
    solar that will bypass the battery; grid charge asks for the headroom on
    night-window slots with no sun.
    """
    headroom = max(0.0, obs.capacity - obs.charge)
    residual_solar = max(0.0, obs.cs - headroom)
    discharge = max(0.0, obs.gc - residual_solar)
    charge_grid = headroom if (in_window and obs.cs == 0.0) else 0.0
    return Action(headroom, charge_grid, discharge)


def greedy_rollout(trace, config: EnvConfig):
    """Total cost and settlements of the greedy heuristic on a trace."""

    def policy(obs: Observation) -> Action:
        in_window = in_controlled_window(obs.slot, config.window_start_slot, config.window_end_slot)
        return greedy_policy(obs, in_window)

    return rollout(config, trace, policy)


@dataclass(frozen=True)
class DiscretizedSchedule:
    """Arg-min schedule of the state-of-charge dynamic program.

    ``total_cost`` is the true environment rollout cost of replaying
    ``requests`` from an empty battery (no lattice snapping), so it is always
    an achievable cost.
    """

    soc_levels: int
    action_indices: tuple[int, ...]
    requests: tuple[Action, ...]
    total_cost: float


def _request_grid(capacity: float, a_levels: int) -> np.ndarray:
    # i * spacing rather than linspace so level values are bitwise identical
    # across capacities sharing an absolute spacing
    spacing = capacity / (a_levels - 1)
    levels = np.arange(a_levels) * spacing
    idx = np.arange(a_levels ** 3)
    i_s, rem = np.divmod(idx, a_levels ** 2)
    i_g, i_d = np.divmod(rem, a_levels)
    return np.column_stack([levels[i_s], levels[i_g], levels[i_d]])


def perfect_foresight_dp(trace, config: EnvConfig, soc_levels: int, action_levels: int) -> DiscretizedSchedule:
    """Backward induction over a state-of-charge lattice with full foresight.

    States are soc_levels evenly spaced charge values; actions are all
    triples from action_levels evenly spaced request values per component.
    Next-state charges are snapped to the nearest lattice level during the
    backward pass; the returned schedule is then re-settled continuously so
    the reported cost is honest (achievable, an upper bound on the true
    optimum). On data quantized to the lattice spacing the snap is exact and
    the cost is the exact discretized optimum.
    """
    if soc_levels < 2 or action_levels < 2:
        raise ConfigError("need at least 2 state and 2 action levels")
    records = list(getattr(trace, "records", trace))
    if not records:
        return DiscretizedSchedule(soc_levels, (), (), 0.0)

    spacing = config.capacity / (soc_levels - 1)
    charges = np.arange(soc_levels) * spacing
    requests = _request_grid(config.capacity, action_levels)

    horizon = len(records)
    value = np.zeros(soc_levels)
    policy = np.empty((horizon, soc_levels), dtype=np.int64)
    for t in range(horizon - 1, -1, -1):
        rec = records[t]
        in_window = in_controlled_window(rec.slot, config.window_start_slot, config.window_end_slot)
        cost, next_charge = settle_batch(charges, requests, rec, config, in_window)
        next_idx = np.clip(np.rint(next_charge / spacing).astype(np.int64), 0, soc_levels - 1)
        total = cost + value[next_idx]
        policy[t] = np.argmin(total, axis=1)
        value = total[np.arange(soc_levels), policy[t]]

    # replay the chosen actions continuously through the real environment
    state = BatteryState(config.capacity, 0.0)
    indices, actions = [], []
    total_cost = 0.0
    for t, rec in enumerate(records):
        k = int(np.clip(np.rint(state.charge / spacing), 0, soc_levels - 1))
        j = int(policy[t, k])
        request = Action(*requests[j])
        in_window = in_controlled_window(rec.slot, config.window_start_slot, config.window_end_slot)
        clipped = clip_action(request, state, rec, in_window)
        state, settlement = settle(state, rec, clipped, config, in_window)
        total_cost += settlement.cost
        indices.append(j)
        actions.append(request)
    return DiscretizedSchedule(soc_levels, tuple(indices), tuple(actions), total_cost)


def enumerate_exhaustive(trace, config: EnvConfig, soc_levels: int, action_levels: int) -> float:
    """Minimum cost over every discretized action sequence, settled exactly.

    Ground truth for perfect_foresight_dp on tiny horizons. Memoizes on
    (step, charge) — the cost-to-go depends on nothing else — which keeps the
    search tractable on lattice-quantized data while still covering the full
    request space.
    """
    records = list(getattr(trace, "records", trace))
    horizon = len(records)
    if horizon == 0:
        return 0.0
    if action_levels ** (3 * horizon) * soc_levels > ENUMERATION_GUARD:
        raise ResourceGuardError(
            f"A^(3T)*K = {action_levels}^{3 * horizon} * {soc_levels} exceeds {ENUMERATION_GUARD:g}"
        )
    requests = [Action(*row) for row in _request_grid(config.capacity, action_levels)]
    windows = [
        in_controlled_window(rec.slot, config.window_start_slot, config.window_end_slot)
        for rec in records
    ]
    memo: dict[tuple[int, float], float] = {}
    calls = 0

    def best(t: int, charge: float) -> float:
        nonlocal calls
        if t == horizon:
            return 0.0
        key = (t, round(charge, 12))
        hit = memo.get(key)
        if hit is not None:
            return hit
        rec = records[t]
        state = BatteryState(config.capacity, charge)
        minimum = np.inf
        for request in requests:
            calls += 1
            if calls > ENUMERATION_CALL_LIMIT:
                raise ResourceGuardError(f"enumeration exceeded {ENUMERATION_CALL_LIMIT} settle calls")
            clipped = clip_action(request, state, rec, windows[t])
            new_state, settlement = settle(state, rec, clipped, config, windows[t])
            total = settlement.cost + best(t + 1, new_state.charge)
            if total < minimum:
                minimum = total
        memo[key] = minimum
        return minimum

    return best(0, 0.0)
