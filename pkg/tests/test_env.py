from datetime import date

import numpy as np
import pytest

from homebess.env import (
    Action,
    BatteryEnv,
    BatteryState,
    EnvConfig,
    NULL_ACTION,
    clip_action,
    in_controlled_window,
    rollout,
    settle,
    settle_batch,
    settlement_rows,
)
from homebess.errors import ConfigError, ContractError, PolicyError, ProtocolError, ValidationError
from homebess.ingest import HalfHourRecord, SyntheticProfile, generate_synthetic_weeks

DAY = date(2013, 1, 7)


def rec(gc=0.0, cl=0.0, cs=0.0, slot=24):
    return HalfHourRecord(DAY, slot, gc, cl, cs)


def test_window_boundaries():
    # enumerate all 48 slots against the interval definition on start times
    def slot_start_minutes(slot):
        return 30 * slot

    expected = {
        slot
        for slot in range(48)
        if slot_start_minutes(slot) >= 23 * 60 or slot_start_minutes(slot) < 8 * 60
    }
    got = {slot for slot in range(48) if in_controlled_window(slot)}
    assert got == expected
    assert in_controlled_window(46)       # starts 23:00
    assert not in_controlled_window(24)   # starts 12:00
    assert not in_controlled_window(16)   # starts 8:00, half-open boundary


def test_window_rejects_bad_slot():
    with pytest.raises(ValidationError):
        in_controlled_window(48)


def test_clip_solar_charge_limited_by_solar_and_headroom():
    state = BatteryState(2.0, 0.0)
    clipped = clip_action(Action(1.0, 0.0, 0.0), state, rec(cs=0.3), in_window=False)
    assert clipped == Action(0.3, 0.0, 0.0)


def test_clip_grid_charge_gated_by_window():
    state = BatteryState(2.0, 0.0)
    clipped = clip_action(Action(0.0, 0.5, 0.0), state, rec(), in_window=False)
    assert clipped.charge_grid == 0.0
    clipped = clip_action(Action(0.0, 0.5, 0.0), state, rec(slot=0), in_window=True)
    assert clipped.charge_grid == 0.5


def test_clip_discharge_limited_by_stored_energy():
    state = BatteryState(2.0, 0.2)
    clipped = clip_action(Action(0.0, 0.0, 5.0), state, rec(), in_window=False)
    assert clipped == Action(0.0, 0.0, 0.2)


def test_settle_costs_unmet_demand_at_tariffs():
    config = EnvConfig(capacity=2.0)
    state = BatteryState(2.0, 0.0)
    record = rec(gc=1.0, cl=0.5)
    new_state, s = settle(state, record, NULL_ACTION, config, in_window=False)
    assert s.cost == pytest.approx(0.27 * 1.0 + 0.10 * 0.5, abs=1e-12)
    assert new_state.charge == 0.0


def test_settle_zero_step():
    config = EnvConfig(capacity=2.0)
    state = BatteryState(2.0, 0.7)
    new_state, s = settle(state, rec(), NULL_ACTION, config, in_window=False)
    assert s.cost == 0.0
    assert new_state.charge == 0.7


def test_settle_charge_then_discharge_same_step():
    config = EnvConfig(capacity=2.0)
    state = BatteryState(2.0, 0.0)
    record = rec(gc=1.0, cs=1.5)
    clipped = clip_action(Action(1.5, 0.0, 1.0), state, record, in_window=False)
    new_state, s = settle(state, record, clipped, config, in_window=False)
    assert s.solar_to_battery == 1.5
    assert s.solar_to_load == 0.0
    assert s.discharge_to_gc == 1.0
    assert s.residual_gc == 0.0
    assert s.cost == 0.0
    assert new_state.charge == pytest.approx(0.5, abs=1e-12)


def test_settle_rejects_infeasible_clipped_action():
    config = EnvConfig(capacity=1.0)
    state = BatteryState(1.0, 0.0)
    with pytest.raises(ContractError):
        settle(state, rec(cs=0.0), Action(0.5, 0.0, 0.0), config, in_window=False)


def test_settle_grid_charge_paid_at_controlled_tariff():
    config = EnvConfig(capacity=1.0)
    state = BatteryState(1.0, 0.0)
    record = rec(slot=0)
    clipped = clip_action(Action(0.0, 1.0, 0.0), state, record, in_window=True)
    new_state, s = settle(state, record, clipped, config, in_window=True)
    assert s.grid_to_battery == 1.0
    assert s.cost == pytest.approx(0.10, abs=1e-12)
    assert new_state.charge == 1.0


def test_settle_solar_to_cl_switch():
    record = rec(gc=0.1, cl=0.5, cs=0.6)
    state = BatteryState(1.0, 0.0)
    on = EnvConfig(capacity=1.0, solar_serves_cl=True)
    off = EnvConfig(capacity=1.0, solar_serves_cl=False)
    _, s_on = settle(state, record, NULL_ACTION, on, in_window=False)
    _, s_off = settle(state, record, NULL_ACTION, off, in_window=False)
    assert s_on.solar_to_load == pytest.approx(0.6)
    assert s_on.cost == pytest.approx(0.10 * 0.0, abs=1e-12)
    assert s_off.solar_to_load == pytest.approx(0.1)
    assert s_off.spilled_solar == pytest.approx(0.5)
    assert s_off.cost == pytest.approx(0.10 * 0.5, abs=1e-12)


def _random_triple(rng):
    capacity = float(rng.uniform(0.2, 3.0))
    state = BatteryState(capacity, float(rng.uniform(0.0, capacity)))
    record = HalfHourRecord(
        DAY,
        int(rng.integers(0, 48)),
        float(rng.uniform(0, 2)),
        float(rng.uniform(0, 1)),
        float(rng.uniform(0, 2)),
    )
    scale = 10.0 ** rng.integers(-2, 4)
    raw = Action(*(float(v) for v in rng.uniform(0, scale, size=3)))
    return state, record, raw


def test_randomized_invariants():
    """Energy conservation, charge bounds, window gating, cost decomposition."""
    rng = np.random.default_rng(123)
    config_cache = {}
    for _ in range(2000):
        state, record, raw = _random_triple(rng)
        key = state.capacity
        config = config_cache.setdefault(key, EnvConfig(capacity=key))
        in_window = in_controlled_window(record.slot)
        clipped = clip_action(raw, state, record, in_window)
        new_state, s = settle(state, record, clipped, config, in_window)
        # energy conservation
        delta = s.solar_to_battery + s.grid_to_battery - s.discharge_to_gc - s.discharge_to_cl
        assert abs((new_state.charge - state.charge) - delta) < 1e-9
        # charge bounds
        assert -1e-9 <= new_state.charge <= state.capacity + 1e-9
        # window gating
        if not in_window:
            assert s.grid_to_battery == 0.0
        # cost decomposition
        recomputed = 0.27 * s.residual_gc + 0.10 * s.residual_cl + 0.10 * s.grid_to_battery
        assert abs(recomputed - s.cost) < 1e-9
        # solar balance
        assert abs((s.solar_to_battery + s.solar_to_load + s.spilled_solar) - record.cs) < 1e-9


def test_settle_batch_matches_scalar():
    rng = np.random.default_rng(7)
    config = EnvConfig(capacity=1.5)
    for _ in range(50):
        record = HalfHourRecord(
            DAY, int(rng.integers(0, 48)),
            float(rng.uniform(0, 1.5)), float(rng.uniform(0, 0.5)), float(rng.uniform(0, 1.5)),
        )
        in_window = in_controlled_window(record.slot)
        charges = rng.uniform(0, 1.5, size=4)
        requests = rng.uniform(0, 2.0, size=(6, 3))
        costs, next_charges = settle_batch(charges, requests, record, config, in_window)
        for i, charge in enumerate(charges):
            state = BatteryState(1.5, float(charge))
            for j, req in enumerate(requests):
                clipped = clip_action(Action(*req), state, record, in_window)
                new_state, s = settle(state, record, clipped, config, in_window)
                assert costs[i, j] == pytest.approx(s.cost, abs=1e-12)
                assert next_charges[i, j] == pytest.approx(new_state.charge, abs=1e-12)


def test_null_action_with_no_solar_leaves_residuals_equal_to_demand():
    week = generate_synthetic_weeks(1, SyntheticProfile(peak_solar=0.0, noise=0.0), seed=0)[0]
    config = EnvConfig(capacity=1.0)
    env = BatteryEnv(config)
    obs = env.reset(week)
    for record in week.records:
        obs, _, _, s = env.step(NULL_ACTION)
        assert s.residual_gc == record.gc
        assert s.residual_cl == record.cl


def test_reset_and_step_protocol():
    week = generate_synthetic_weeks(1, SyntheticProfile(noise=0.0), seed=0)[0]
    config = EnvConfig(capacity=1.0)
    env = BatteryEnv(config)
    with pytest.raises(ProtocolError):
        env.step(NULL_ACTION)
    obs = env.reset(week)
    assert obs.charge == 0.0
    assert obs.residual_gc == 0.0 and obs.residual_cl == 0.0
    assert obs.capacity == 1.0
    assert obs.gc == week.records[0].gc
    steps = 0
    while not env.done:
        obs, reward, done, _ = env.step(NULL_ACTION)
        steps += 1
    assert steps == 336
    assert done
    with pytest.raises(ProtocolError):
        env.step(NULL_ACTION)


def test_reset_empty_trace():
    with pytest.raises(ConfigError):
        BatteryEnv(EnvConfig(capacity=1.0)).reset([])


def test_step_reward_is_negated_cost():
    config = EnvConfig(capacity=2.0)
    env = BatteryEnv(config)
    env.reset([rec(gc=1.0, cl=0.5)])
    _, reward, done, s = env.step(NULL_ACTION)
    assert reward == pytest.approx(-0.32, abs=1e-12)
    assert done


def test_observation_carries_residuals_and_next_record():
    config = EnvConfig(capacity=2.0)
    env = BatteryEnv(config)
    trace = [rec(gc=1.0, cl=0.5, slot=20), rec(gc=0.3, slot=21)]
    env.reset(trace)
    obs, _, _, _ = env.step(NULL_ACTION)
    assert obs.residual_gc == 1.0
    assert obs.residual_cl == 0.5
    assert obs.gc == 0.3
    assert obs.slot == 21


def test_rollout_null_policy_zero_week():
    week = generate_synthetic_weeks(
        1, SyntheticProfile(peak_solar=0, base_demand=0, morning_peak=0,
                            evening_peak=0, cl_demand=0, noise=0), seed=0
    )[0]
    total, settlements = rollout(EnvConfig(capacity=1.0), week, lambda obs: NULL_ACTION)
    assert total == 0.0
    assert len(settlements) == 336


def test_rollout_rejects_bad_policy_output():
    week = generate_synthetic_weeks(1, SyntheticProfile(noise=0.0), seed=0)[0]

    def bad_policy(obs):
        return Action(-0.1, 0.0, 0.0)

    with pytest.raises(PolicyError):
        rollout(EnvConfig(capacity=1.0), week, bad_policy)


def test_monotone_cost_in_capacity_for_greedy_like_policy():
    week = generate_synthetic_weeks(1, SyntheticProfile(noise=0.02), seed=4)[0]

    def policy(obs):
        headroom = obs.capacity - obs.charge
        return Action(headroom, 0.0, max(0.0, obs.gc))

    costs = []
    for capacity in (0.2, 0.5, 1.0, 1.5, 2.0):
        total, _ = rollout(EnvConfig(capacity=capacity), week, policy)
        costs.append(total)
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_settlement_rows_schema():
    config = EnvConfig(capacity=1.0)
    env = BatteryEnv(config)
    trace = [rec(gc=0.4, cs=0.6, slot=24), rec(gc=0.2, slot=25)]
    obs = env.reset(trace)
    settlements, charges = [], []
    while not env.done:
        obs, _, _, s = env.step(Action(1.0, 1.0, 1.0))
        settlements.append(s)
        charges.append(obs.charge)
    rows = settlement_rows(trace, settlements, charges)
    assert len(rows) == 2
    assert rows[0][0] == "2013-01-07T12:00"
    # reward column is the negated cost column
    assert rows[0][13] == -rows[0][12]
