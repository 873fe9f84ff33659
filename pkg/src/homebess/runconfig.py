"""Run configuration files, dotted-path overrides, and run manifests.

A run is configured by one YAML file with sections for the data source, the
environment, the agent hyperparameters, training control, the battery-size
sweep and the tuning search space. Every CLI run snapshots its resolved
configuration (plus all seeds and the package version) into a manifest that
can be fed back in as the config to reproduce the run bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from datetime import date

import yaml

from . import __version__
from .ddpg import HyperParams
from .env import EnvConfig
from .errors import ConfigError
from .ingest import SyntheticProfile


@dataclass
class SyntheticSection:
    weeks: int = 15
    seed: int = 12345
    peak_solar: float = 0.7
    base_demand: float = 0.18
    morning_peak: float = 0.25
    evening_peak: float = 0.55
    cl_demand: float = 0.25
    noise: float = 0.03
    quantize: float = 0.0
    start: str = "2013-01-07"

    def profile(self) -> SyntheticProfile:
        return SyntheticProfile(
            peak_solar=self.peak_solar,
            base_demand=self.base_demand,
            morning_peak=self.morning_peak,
            evening_peak=self.evening_peak,
            cl_demand=self.cl_demand,
            noise=self.noise,
            quantize=self.quantize,
            start=date.fromisoformat(str(self.start)),
        )


@dataclass
class DataSection:
    source: str = "synthetic"       # synthetic | ausgrid | normalized
    path: str | None = None
    customer: int | None = None
    year: int | None = None
    n_train: int = 8
    split_seed: int = 0
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)


@dataclass
class EnvSection:
    capacity: float = 1.0
    tariff_gc: float = 0.27
    tariff_cl: float = 0.10
    window_start_slot: int = 46
    window_end_slot: int = 16
    solar_serves_cl: bool = True

    def env_config(self) -> EnvConfig:
        return EnvConfig(
            capacity=self.capacity,
            tariff_gc=self.tariff_gc,
            tariff_cl=self.tariff_cl,
            window_start_slot=self.window_start_slot,
            window_end_slot=self.window_end_slot,
            solar_serves_cl=self.solar_serves_cl,
        )


@dataclass
class AgentSection:
    actor_lr: float = 3e-4
    critic_lr: float = 3e-3
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    actor_hiddens: list = field(default_factory=lambda: [64, 64])
    critic_hiddens: list = field(default_factory=lambda: [64, 64])
    noise_kind: str = "ou"
    noise_theta: float = 0.15
    noise_sigma: float = 0.2
    noise_sigma_end: float = 0.02
    training_iterations: int = 40_320
    episode_mode: str = "week"

    def hyperparams(self) -> HyperParams:
        return HyperParams(
            actor_lr=self.actor_lr,
            critic_lr=self.critic_lr,
            gamma=self.gamma,
            tau=self.tau,
            batch_size=self.batch_size,
            buffer_capacity=self.buffer_capacity,
            actor_hiddens=tuple(self.actor_hiddens),
            critic_hiddens=tuple(self.critic_hiddens),
            noise_kind=self.noise_kind,
            noise_theta=self.noise_theta,
            noise_sigma=self.noise_sigma,
            noise_sigma_end=self.noise_sigma_end,
            training_iterations=self.training_iterations,
            episode_mode=self.episode_mode,
        )


@dataclass
class TrainingSection:
    seed: int = 1
    eval_every: int = 1680
    keep: str = "best"              # best | final


@dataclass
class SweepSection:
    sizes: list = field(default_factory=lambda: [round(0.2 * k, 1) for k in range(1, 11)])
    oracle_spacing: float = 0.1     # absolute kWh lattice step shared by all sizes


@dataclass
class SearchSection:
    actor_grid: list = field(default_factory=lambda: [[200, 200], [300, 300], [400, 400]])
    critic_grid: list = field(default_factory=lambda: [[200, 200], [300, 300], [400, 400], [500, 500]])
    lr_low: float = 1e-7
    lr_high: float = 1e-1
    lr_log_uniform: bool = False
    budget: int = 72
    seed: int = 7


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    env: EnvSection = field(default_factory=EnvSection)
    agent: AgentSection = field(default_factory=AgentSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    search: SearchSection = field(default_factory=SearchSection)


def _build_section(cls, mapping, path):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(mapping).__name__}")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in mapping.items():
        dotted = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key: {dotted}")
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, dotted)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "data": DataSection,
    "env": EnvSection,
    "agent": AgentSection,
    "training": TrainingSection,
    "sweep": SweepSection,
    "search": SearchSection,
    "synthetic": SyntheticSection,
}


def config_from_dict(mapping: dict) -> RunConfig:
    """Build a RunConfig from a nested dict, rejecting unknown keys by path."""
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError("config root must be a mapping")
    # a manifest wraps the config; accept it directly
    if "config" in mapping and "artifact_version" in mapping:
        mapping = mapping["config"]
    out = {}
    for key, value in mapping.items():
        if key not in _SECTION_TYPES or key == "synthetic":
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _build_section(_SECTION_TYPES[key], value, key)
    return RunConfig(**out)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    return config_from_dict(raw)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply ``section.key=value`` (or deeper) overrides onto a config copy.

    Values are parsed as YAML scalars, so ``agent.actor_hiddens=[32,32]`` and
    ``env.solar_serves_cl=false`` both work. Unknown paths fail with the
    offending dotted key.
    """
    tree = config_to_dict(cfg)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, _, raw_value = item.partition("=")
        keys = dotted.strip().split(".")
        node = tree
        for k in keys[:-1]:
            if not isinstance(node, dict) or k not in node:
                raise ConfigError(f"unknown config key: {dotted.strip()}")
            node = node[k]
        leaf = keys[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ConfigError(f"unknown config key: {dotted.strip()}")
        try:
            node[leaf] = yaml.safe_load(raw_value)
        except yaml.YAMLError:
            raise ConfigError(f"override {item!r}: value is not a YAML scalar") from None
    return config_from_dict(tree)


def manifest_dict(verb: str, cfg: RunConfig, extra: dict | None = None) -> dict:
    out = {
        "artifact_version": __version__,
        "verb": verb,
        "config": config_to_dict(cfg),
    }
    if extra:
        out.update(extra)
    return out


def write_manifest(path, verb: str, cfg: RunConfig, extra: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(manifest_dict(verb, cfg, extra), fh, sort_keys=False)
