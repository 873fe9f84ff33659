"""Experiment orchestration.

Training runs with periodic validation, held-out-week evaluation, the
battery-size sweep with oracle and no-battery reference columns, and the
grid-times-uniform hyperparameter search with a ranked results table.
Everything is seeded from the run configuration: per-trial and per-size seeds
are derived from the root seed with a fixed spawn scheme, so results do not
depend on execution order and a manifest reproduces a run bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import baselines, ddpg
from .ddpg import (
    Checkpoint,
    DdpgAgent,
    HyperParams,
    SeedBundle,
    checkpoint_from_agent,
    compute_feature_scales,
    evaluation_policy,
    run_episode,
)
from .env import (
    SETTLEMENT_TABLE_HEADER,
    BatteryEnv,
    EnvConfig,
    in_controlled_window,
    rollout,
    settlement_rows,
)
from .errors import ConfigError, NumericError
from .ingest import (
    DataSplit,
    WeekTrace,
    filter_complete_weeks,
    generate_synthetic_weeks,
    parse_ausgrid_csv,
    read_normalized,
    select_household,
    split_train_test,
)
from .runconfig import DataSection, RunConfig, config_from_dict, config_to_dict, write_manifest

TRAINING_LOG_HEADER = ("iteration", "episode_reward", "critic_loss", "actor_objective", "noise_sigma", "wall_time")
CURVE_HEADER = ("iteration", "mean_episode_reward")
SWEEP_TABLE_HEADER = ("capacity_kwh", "mean_episode_reward", "oracle_cost", "no_battery_cost")
RANKED_TRIALS_HEADER = (
    "rank", "trial", "status", "lr", "actor_hiddens", "critic_hiddens",
    "mean_episode_reward", "wall_time_s",
)

# table currency values are reported at nano-AUD precision so that run-to-run
# float dust cannot perturb ordering comparisons
_COST_DECIMALS = 9


@dataclass(frozen=True)
class TrialResult:
    hyperparams: HyperParams
    mean_episode_reward: float
    training_curve: tuple
    seeds: SeedBundle
    wall_time: float
    status: str                      # completed | diverged
    per_week_rewards: tuple = ()
    trial_index: int = -1

    def __post_init__(self):
        if self.mean_episode_reward > 1e-12:
            raise ValueError(
                f"mean episode reward {self.mean_episode_reward} is positive; "
                "rewards are negated costs and cannot exceed zero"
            )
        if self.status not in ("completed", "diverged"):
            raise ValueError(f"bad status {self.status!r}")


@dataclass(frozen=True)
class SweepEntry:
    capacity: float
    mean_episode_reward: float
    oracle_cost: float
    no_battery_cost: float


@dataclass(frozen=True)
class SweepResult:
    entries: tuple

    def __post_init__(self):
        caps = [e.capacity for e in self.entries]
        if any(b <= a for a, b in zip(caps, caps[1:])):
            raise ValueError(f"capacities must be strictly increasing, got {caps}")
        oracle = [e.oracle_cost for e in self.entries]
        if any(b > a for a, b in zip(oracle, oracle[1:])):
            raise ValueError(f"oracle cost column must be non-increasing, got {oracle}")


def derive_seed(root: int, index: int) -> int:
    """Deterministic per-trial seed: child ``index`` of the root seed."""
    return int(np.random.SeedSequence(root, spawn_key=(index,)).generate_state(1)[0])


def load_weeks(data: DataSection) -> list[WeekTrace]:
    """Materialize the configured data source as complete weeks."""
    if data.source == "synthetic":
        return generate_synthetic_weeks(data.synthetic.weeks, data.synthetic.profile(), data.synthetic.seed)
    if data.source == "ausgrid":
        if not data.path:
            raise ConfigError("data.path is required for source 'ausgrid'")
        if data.customer is None:
            raise ConfigError("data.customer is required for source 'ausgrid'")
        try:
            with open(data.path, "r", encoding="utf-8", newline="") as fh:
                first = fh.readline()
                # real exports carry a one-line notice before the header
                if not first.startswith("Customer,"):
                    text = fh.read()
                else:
                    text = first + fh.read()
        except FileNotFoundError:
            raise ConfigError(f"data file not found: {data.path}") from None
        parsed = parse_ausgrid_csv(io.StringIO(text))
        records = select_household(parsed, data.customer)
        return filter_complete_weeks(records, data.year)
    if data.source == "normalized":
        if not data.path:
            raise ConfigError("data.path is required for source 'normalized'")
        try:
            with open(data.path, "r", encoding="utf-8", newline="") as fh:
                records = read_normalized(fh)
        except FileNotFoundError:
            raise ConfigError(f"data file not found: {data.path}") from None
        return filter_complete_weeks(records, data.year)
    raise ConfigError(f"unknown data.source {data.source!r}")


def load_split(data: DataSection) -> DataSplit:
    return split_train_test(load_weeks(data), data.n_train, data.split_seed)


def _policy_reward(nets, scales, env_config: EnvConfig, week) -> float:
    def policy(obs):
        obs_vec = ddpg.normalize_observation(obs, scales)
        action, _ = ddpg.act(nets, obs_vec, None, env_config.capacity)
        return action

    cost, _ = rollout(env_config, week, policy)
    return -cost


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_training(cfg: RunConfig, out_dir=None) -> tuple[Checkpoint, TrialResult]:
    """Train one agent per the config; return the kept checkpoint and result.

    Each episode draws one training week uniformly at random (or, in 'split'
    episode mode, runs the whole training split as one long episode), until
    the environment-step budget is reached; episodes always finish, so the
    actual step count rounds up to an episode boundary. Validation rollouts
    on a fixed training week every ``eval_every`` steps form the training
    curve and select the best checkpoint. A non-finite loss aborts the trial:
    the partial log is kept and the trial is marked diverged.
    """
    t_start = time.perf_counter()
    split = load_split(cfg.data)
    env_config = cfg.env.env_config()
    hp = cfg.agent.hyperparams()
    seeds = SeedBundle.from_root(cfg.training.seed)
    scales = compute_feature_scales(split.train, env_config.capacity)
    agent = DdpgAgent(hp, env_config, scales, seeds)
    week_rng = np.random.default_rng(seeds.week)
    validation_week = split.train[0]
    env = BatteryEnv(env_config)

    if cfg.training.keep not in ("best", "final"):
        raise ConfigError(f"training.keep={cfg.training.keep!r} must be 'best' or 'final'")
    if cfg.training.eval_every < 1:
        raise ConfigError("training.eval_every must be >= 1")

    if hp.episode_mode == "split":
        combined = [rec for week in split.train for rec in week.records]
        episode_traces = None
    else:
        combined = None
        episode_traces = split.train

    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    log_writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.yaml", "train", cfg)
        log_fh = open(out / "training_log.csv", "w", encoding="utf-8", newline="")
        log_writer = csv.writer(log_fh, lineterminator="\n")
        log_writer.writerow(TRAINING_LOG_HEADER)

    curve: list[tuple[int, float]] = []
    best_reward = -math.inf
    best_ckpt: Checkpoint | None = None
    status = "completed"
    next_eval = cfg.training.eval_every
    try:
        while agent.global_step < hp.training_iterations:
            if combined is not None:
                trace = combined
            else:
                trace = episode_traces[int(week_rng.integers(0, len(episode_traces)))]
            episode_reward, _ = run_episode(agent, env, trace, mode="train")
            if log_writer is not None:
                stats = agent.last_episode_stats
                log_writer.writerow(
                    [
                        agent.global_step,
                        repr(episode_reward),
                        repr(stats["critic_loss"]),
                        repr(stats["actor_objective"]),
                        repr(agent.current_sigma()),
                        repr(time.perf_counter() - t_start),
                    ]
                )
            while agent.global_step >= next_eval:
                val = _policy_reward(agent.nets, scales, env_config, validation_week)
                curve.append((agent.global_step, val))
                if val > best_reward:
                    best_reward = val
                    best_ckpt = checkpoint_from_agent(agent)
                next_eval += cfg.training.eval_every
        # ensure the final parameters were also a candidate for "best"
        if status == "completed" and agent.global_step > 0 and (not curve or curve[-1][0] != agent.global_step):
            val = _policy_reward(agent.nets, scales, env_config, validation_week)
            curve.append((agent.global_step, val))
            if val > best_reward:
                best_reward = val
                best_ckpt = checkpoint_from_agent(agent)
    except NumericError:
        status = "diverged"
    finally:
        if log_fh is not None:
            log_fh.close()

    if status == "completed" and cfg.training.keep == "final":
        kept = checkpoint_from_agent(agent)
    elif best_ckpt is not None:
        kept = best_ckpt
    elif status == "completed":
        kept = checkpoint_from_agent(agent)
    else:
        # diverged before the first validation rollout: keep the initial nets
        kept = checkpoint_from_agent(DdpgAgent(hp, env_config, scales, seeds))

    mean_reward, per_week = evaluate(kept, split.test)
    result = TrialResult(
        hyperparams=hp,
        mean_episode_reward=mean_reward,
        training_curve=tuple(curve),
        seeds=seeds,
        wall_time=time.perf_counter() - t_start,
        status=status,
        per_week_rewards=tuple(per_week),
    )
    if out is not None:
        ddpg.save_checkpoint(out / "checkpoint.npz", kept)
        _write_csv(out / "curve.csv", CURVE_HEADER, curve)
        with open(out / "trial.json", "w", encoding="utf-8") as fh:
            json.dump(_trial_to_dict(result), fh, indent=2, sort_keys=True)
        eval_dir = out / "eval"
        evaluate(kept, split.test, out_dir=eval_dir)
    return kept, result


def _trial_to_dict(result: TrialResult) -> dict:
    d = asdict(result)
    d["hyperparams"]["actor_hiddens"] = list(result.hyperparams.actor_hiddens)
    d["hyperparams"]["critic_hiddens"] = list(result.hyperparams.critic_hiddens)
    d["training_curve"] = [list(p) for p in result.training_curve]
    d["per_week_rewards"] = list(result.per_week_rewards)
    return d


def evaluate(ckpt: Checkpoint, test_weeks, out_dir=None) -> tuple[float, list[float]]:
    """Noise-free rollout of a checkpoint over every week; mean and per-week rewards.

    With ``out_dir`` set, writes per_week.csv and the flat settlements table
    used for daily-profile plots.
    """
    policy = evaluation_policy(ckpt)
    per_week = []
    all_rows = []
    for week in test_weeks:
        env = BatteryEnv(ckpt.env_config)
        obs = env.reset(week)
        settlements, charges = [], []
        total = 0.0
        while not env.done:
            obs, reward, _, settlement = env.step(policy(obs))
            total += reward
            settlements.append(settlement)
            charges.append(obs.charge)
        per_week.append(total)
        all_rows.extend(settlement_rows(week, settlements, charges))
    mean_reward = float(np.mean(per_week)) if per_week else 0.0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(
            out / "per_week.csv",
            ("week_start", "episode_reward"),
            [(w.start_date.isoformat() if isinstance(w, WeekTrace) else i, r)
             for i, (w, r) in enumerate(zip(test_weeks, per_week))],
        )
        _write_csv(out / "settlements.csv", SETTLEMENT_TABLE_HEADER, all_rows)
    return mean_reward, per_week


def oracle_lattice(capacity: float, spacing: float) -> int:
    """Number of lattice levels for a capacity on an absolute kWh spacing."""
    n = capacity / spacing
    if abs(n - round(n)) > 1e-9:
        raise ConfigError(f"capacity {capacity} is not a multiple of oracle spacing {spacing}")
    return int(round(n)) + 1


def oracle_costs(cfg: RunConfig, weeks=None, out_dir=None):
    """Per-week no-battery, greedy and perfect-foresight costs for the config.

    With ``out_dir`` set, also exports greedy and perfect-foresight episode
    traces in the same settlement-table schema the agent evaluation writes,
    for side-by-side plotting.
    """
    if weeks is None:
        weeks = load_split(cfg.data).test
    env_config = cfg.env.env_config()
    levels = oracle_lattice(env_config.capacity, cfg.sweep.oracle_spacing)
    rows = []
    greedy_table, dp_table = [], []
    for week in weeks:
        nb = baselines.no_battery_cost(week, env_config)
        greedy_cost, _ = baselines.greedy_rollout(week, env_config)
        dp = baselines.perfect_foresight_dp(week, env_config, levels, levels)
        start = week.start_date.isoformat() if isinstance(week, WeekTrace) else ""
        rows.append((start, nb, greedy_cost, dp.total_cost))
        if out_dir is not None:
            greedy_table.extend(_greedy_settlement_rows(week, env_config))
            dp_table.extend(_replay_schedule_rows(week, env_config, dp))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "greedy_settlements.csv", SETTLEMENT_TABLE_HEADER, greedy_table)
        _write_csv(out / "dp_settlements.csv", SETTLEMENT_TABLE_HEADER, dp_table)
    return rows


def _greedy_settlement_rows(week, env_config: EnvConfig):
    env = BatteryEnv(env_config)
    obs = env.reset(week)
    settlements, charges = [], []
    while not env.done:
        in_window = in_controlled_window(
            obs.slot, env_config.window_start_slot, env_config.window_end_slot
        )
        action = baselines.greedy_policy(obs, in_window)
        obs, _, _, settlement = env.step(action)
        settlements.append(settlement)
        charges.append(obs.charge)
    return settlement_rows(week, settlements, charges)


def _replay_schedule_rows(week, env_config: EnvConfig, schedule):
    env = BatteryEnv(env_config)
    obs = env.reset(week)
    settlements, charges = [], []
    for request in schedule.requests:
        obs, _, _, settlement = env.step(request)
        settlements.append(settlement)
        charges.append(obs.charge)
    return settlement_rows(week, settlements, charges)


def battery_size_sweep(cfg: RunConfig, sizes=None, out_dir=None) -> SweepResult:
    """Train and evaluate one agent per battery size; tabulate against oracles.

    All sizes share the same data split; training seeds are derived per size
    from the root seed and recorded. The oracle column uses a lattice on the
    shared absolute spacing so refining capacity can only improve it.
    """
    sizes = [float(s) for s in (sizes if sizes is not None else cfg.sweep.sizes)]
    if any(b <= a for a, b in zip(sizes, sizes[1:])) or any(s <= 0 for s in sizes):
        raise ConfigError(f"sweep sizes must be positive and strictly increasing, got {sizes}")

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.yaml", "sweep", cfg)

    test_weeks = load_split(cfg.data).test
    entries = []
    for i, capacity in enumerate(sizes):
        trial_cfg = config_from_dict(config_to_dict(cfg))
        trial_cfg.env.capacity = capacity
        trial_cfg.training.seed = derive_seed(cfg.training.seed, i)
        size_dir = out / "sizes" / f"{capacity:g}" if out is not None else None
        ckpt, result = run_training(trial_cfg, out_dir=size_dir)
        env_config = trial_cfg.env.env_config()
        levels = oracle_lattice(capacity, cfg.sweep.oracle_spacing)
        dp_costs = [
            baselines.perfect_foresight_dp(week, env_config, levels, levels).total_cost
            for week in test_weeks
        ]
        nb_costs = [baselines.no_battery_cost(week, env_config) for week in test_weeks]
        entries.append(
            SweepEntry(
                capacity=capacity,
                mean_episode_reward=result.mean_episode_reward,
                oracle_cost=round(float(np.mean(dp_costs)), _COST_DECIMALS),
                no_battery_cost=round(float(np.mean(nb_costs)), _COST_DECIMALS),
            )
        )
    sweep = SweepResult(entries=tuple(entries))
    if out is not None:
        _write_csv(
            out / "sweep_table.csv",
            SWEEP_TABLE_HEADER,
            [(e.capacity, e.mean_episode_reward, e.oracle_cost, e.no_battery_cost) for e in sweep.entries],
        )
    return sweep


@dataclass(frozen=True)
class SearchSpace:
    actor_grid: tuple
    critic_grid: tuple
    lr_low: float
    lr_high: float
    lr_log_uniform: bool = False

    def __post_init__(self):
        if not self.actor_grid or not self.critic_grid:
            raise ConfigError("search grid axes must be non-empty")
        if not 0 < self.lr_low < self.lr_high:
            raise ConfigError(f"need 0 < lr_low < lr_high, got [{self.lr_low}, {self.lr_high}]")

    @property
    def cells(self):
        return [(tuple(a), tuple(c)) for a in self.actor_grid for c in self.critic_grid]


def search_space_from(cfg: RunConfig) -> SearchSpace:
    s = cfg.search
    return SearchSpace(
        actor_grid=tuple(tuple(a) for a in s.actor_grid),
        critic_grid=tuple(tuple(c) for c in s.critic_grid),
        lr_low=float(s.lr_low),
        lr_high=float(s.lr_high),
        lr_log_uniform=bool(s.lr_log_uniform),
    )


def _draw_lr(space: SearchSpace, rng: np.random.Generator) -> float:
    if space.lr_log_uniform:
        return float(np.exp(rng.uniform(np.log(space.lr_low), np.log(space.lr_high))))
    return float(rng.uniform(space.lr_low, space.lr_high))


def sample_hyperparams(space: SearchSpace, rng: np.random.Generator, base: HyperParams | None = None) -> HyperParams:
    """One random draw from the space: uniform grid cell, uniform learning rate."""
    base = base or HyperParams()
    cells = space.cells
    actor, critic = cells[int(rng.integers(0, len(cells)))]
    lr = _draw_lr(space, rng)
    return HyperParams(
        **{
            **asdict(base),
            "actor_lr": lr,
            "critic_lr": lr,
            "actor_hiddens": actor,
            "critic_hiddens": critic,
        }
    )


@dataclass(frozen=True)
class TrialSpec:
    index: int
    actor_hiddens: tuple
    critic_hiddens: tuple
    lr: float


def plan_trials(space: SearchSpace, budget: int, rng: np.random.Generator) -> list[TrialSpec]:
    """Full grid cross-product with uniform LR draws, cell-major, cut to budget.

    A budget of cells * k yields k draws per cell; the published setup is the
    12-cell grid at budget 72, i.e. six draws per cell.
    """
    if budget < 1:
        raise ConfigError("search budget must be >= 1")
    cells = space.cells
    draws = math.ceil(budget / len(cells))
    trials = []
    for actor, critic in cells:
        for _ in range(draws):
            trials.append(TrialSpec(len(trials), actor, critic, _draw_lr(space, rng)))
    return trials[:budget]


def _trial_config(cfg: RunConfig, spec: TrialSpec) -> RunConfig:
    trial_cfg = config_from_dict(config_to_dict(cfg))
    trial_cfg.agent.actor_lr = spec.lr
    trial_cfg.agent.critic_lr = spec.lr
    trial_cfg.agent.actor_hiddens = list(spec.actor_hiddens)
    trial_cfg.agent.critic_hiddens = list(spec.critic_hiddens)
    trial_cfg.training.seed = derive_seed(cfg.training.seed, spec.index)
    return trial_cfg


def _run_search_trial(payload):
    cfg = config_from_dict(payload["config"])
    spec = TrialSpec(
        index=payload["index"],
        actor_hiddens=tuple(payload["actor_hiddens"]),
        critic_hiddens=tuple(payload["critic_hiddens"]),
        lr=payload["lr"],
    )
    trial_cfg = _trial_config(cfg, spec)
    out_dir = Path(payload["out_dir"]) if payload["out_dir"] else None
    _, result = run_training(trial_cfg, out_dir=out_dir)
    return payload["index"], result


def rank_trials(results: list[TrialResult]) -> list[TrialResult]:
    """Descending by reward; diverged trials always rank below completed ones."""
    return sorted(
        results,
        key=lambda r: (r.status != "completed", -r.mean_episode_reward, r.trial_index),
    )


def hyperparameter_search(cfg: RunConfig, budget: int | None = None, out_dir=None,
                          workers: int = 1) -> list[TrialResult]:
    """Run the tuning study and return trials ranked by mean episode reward."""
    space = search_space_from(cfg)
    budget = int(budget if budget is not None else cfg.search.budget)
    rng = np.random.default_rng(cfg.search.seed)
    specs = plan_trials(space, budget, rng)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out / "manifest.yaml", "tune", cfg)

    payloads = [
        {
            "config": config_to_dict(cfg),
            "index": s.index,
            "actor_hiddens": list(s.actor_hiddens),
            "critic_hiddens": list(s.critic_hiddens),
            "lr": s.lr,
            "out_dir": str(out / "trials" / f"{s.index:03d}") if out is not None else None,
        }
        for s in specs
    ]
    results: dict[int, TrialResult] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, result in pool.map(_run_search_trial, payloads):
                results[index] = result
    else:
        for payload in payloads:
            index, result = _run_search_trial(payload)
            results[index] = result
    ordered = [dataclasses.replace(results[s.index], trial_index=s.index) for s in specs]
    ranked = rank_trials(ordered)
    if out is not None:
        rows = []
        for rank, r in enumerate(ranked, start=1):
            rows.append(
                (
                    rank,
                    r.trial_index,
                    r.status,
                    r.hyperparams.actor_lr,
                    "x".join(str(h) for h in r.hyperparams.actor_hiddens),
                    "x".join(str(h) for h in r.hyperparams.critic_hiddens),
                    r.mean_episode_reward,
                    r.wall_time,
                )
            )
        _write_csv(out / "ranked_trials.csv", RANKED_TRIALS_HEADER, rows)
    return ranked
