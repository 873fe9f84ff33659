"""Deep deterministic policy gradient agent for battery dispatch.

Deterministic sigmoid actor emitting unit-interval requests that are scaled
by the battery capacity, a Q-critic over (state, action), exploration noise
added in the unit action space, a uniform-sampling ring replay buffer,
bootstrapped TD targets through slowly tracked target networks, and the
episode loop wiring it all to the environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import mlp
from .env import Action, BatteryEnv, EnvConfig, Observation
from .errors import ConfigError, NumericError, ShapeError
from .mlp import AdamState, MlpParams

OBS_DIM = 7
ACTION_DIM = 3

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    """Training knobs. The defaults are the desk-scale configuration; the
    published architecture grid (two hidden layers of 200-500 units, uniform
    learning rate in [1e-7, 1e-1]) is reached through the tuning search."""

    actor_lr: float = 3e-4
    critic_lr: float = 3e-3
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    actor_hiddens: tuple[int, ...] = (64, 64)
    critic_hiddens: tuple[int, ...] = (64, 64)
    noise_kind: str = "ou"
    noise_theta: float = 0.15
    noise_sigma: float = 0.2
    noise_sigma_end: float = 0.02
    training_iterations: int = 40_320
    episode_mode: str = "week"

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma={self.gamma} outside [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau={self.tau} outside (0, 1]")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1")
        if self.noise_kind not in ("ou", "gaussian"):
            raise ConfigError(f"noise_kind={self.noise_kind!r} must be 'ou' or 'gaussian'")
        if self.noise_sigma < 0 or self.noise_sigma_end < 0:
            raise ConfigError("noise sigma must be >= 0")
        if self.training_iterations < 0:
            raise ConfigError("training_iterations must be >= 0")
        if self.episode_mode not in ("week", "split"):
            raise ConfigError(f"episode_mode={self.episode_mode!r} must be 'week' or 'split'")
        object.__setattr__(self, "actor_hiddens", tuple(int(h) for h in self.actor_hiddens))
        object.__setattr__(self, "critic_hiddens", tuple(int(h) for h in self.critic_hiddens))


@dataclass(frozen=True)
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions; once full, the oldest is evicted."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self.size = 0
        self._cursor = 0
        self._s = self._a = self._r = self._s2 = self._term = None

    def _allocate(self, t: Transition):
        self._s = np.empty((self.capacity, len(t.s)))
        self._a = np.empty((self.capacity, len(t.a)))
        self._r = np.empty(self.capacity)
        self._s2 = np.empty((self.capacity, len(t.s_next)))
        self._term = np.empty(self.capacity)

    def push(self, t: Transition) -> None:
        if self._s is None:
            self._allocate(t)
        i = self._cursor
        self._s[i] = t.s
        self._a[i] = t.a
        self._r[i] = t.r
        self._s2[i] = t.s_next
        self._term[i] = float(t.terminal)
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator):
        """Uniform draws with replacement, or None when fewer than n stored."""
        if self.size < n:
            return None
        idx = rng.integers(0, self.size, size=n)
        return TransitionBatch(
            s=self._s[idx], a=self._a[idx], r=self._r[idx],
            s_next=self._s2[idx], terminal=self._term[idx],
        )


@dataclass
class TransitionBatch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminal: np.ndarray


@dataclass
class AgentNets:
    actor: MlpParams
    critic: MlpParams
    target_actor: MlpParams
    target_critic: MlpParams
    actor_opt: AdamState
    critic_opt: AdamState


@dataclass
class NoiseState:
    """Ornstein-Uhlenbeck (mean-reverting) or white Gaussian exploration noise."""

    kind: str
    theta: float
    sigma: float
    state: np.ndarray
    rng: np.random.Generator

    def sample(self) -> np.ndarray:
        eps = self.rng.standard_normal(len(self.state))
        if self.kind == "ou":
            self.state = self.state + self.theta * (-self.state) + self.sigma * eps
            return self.state
        return self.sigma * eps

    def reset(self) -> None:
        self.state = np.zeros_like(self.state)


def make_noise(hp: HyperParams, rng: np.random.Generator) -> NoiseState:
    return NoiseState(
        kind=hp.noise_kind, theta=hp.noise_theta, sigma=hp.noise_sigma,
        state=np.zeros(ACTION_DIM), rng=rng,
    )


def build_nets(hp: HyperParams, seed) -> AgentNets:
    """Actor, critic and their target copies from one seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    actor_sizes = [OBS_DIM, *hp.actor_hiddens, ACTION_DIM]
    critic_sizes = [OBS_DIM + ACTION_DIM, *hp.critic_hiddens, 1]
    actor = mlp.init_mlp(actor_sizes, "sigmoid", rng)
    critic = mlp.init_mlp(critic_sizes, "identity", rng)
    return AgentNets(
        actor=actor,
        critic=critic,
        target_actor=mlp.clone_params(actor),
        target_critic=mlp.clone_params(critic),
        actor_opt=mlp.init_adam(actor),
        critic_opt=mlp.init_adam(critic),
    )


def observation_vector(obs: Observation) -> np.ndarray:
    """Raw 7-feature state: (capacity, charge, gc, cl, cs, residual_cl, residual_gc)."""
    return np.array(
        [obs.capacity, obs.charge, obs.gc, obs.cl, obs.cs, obs.residual_cl, obs.residual_gc]
    )


def compute_feature_scales(weeks, capacity: float) -> np.ndarray:
    """Per-feature reference magnitudes from the training weeks' maxima.

    Charge-like features are scaled by the capacity; gc/cl/cs by their
    training maxima (residuals share the matching demand scale). Features
    that are identically zero fall back to scale 1.
    """
    max_gc = max_cl = max_cs = 0.0
    for week in weeks:
        for rec in getattr(week, "records", week):
            max_gc = max(max_gc, rec.gc)
            max_cl = max(max_cl, rec.cl)
            max_cs = max(max_cs, rec.cs)
    gc_s = max_gc or 1.0
    cl_s = max_cl or 1.0
    cs_s = max_cs or 1.0
    return np.array([capacity, capacity, gc_s, cl_s, cs_s, cl_s, gc_s])


def normalize_observation(obs: Observation, scales: np.ndarray) -> np.ndarray:
    """Divide each state feature by its reference magnitude (no clamping)."""
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (OBS_DIM,):
        raise ConfigError(f"expected {OBS_DIM} scales, got shape {scales.shape}")
    if not (scales > 0).all():
        raise ConfigError("feature scales must be strictly positive")
    return observation_vector(obs) / scales


def act(nets: AgentNets, obs_vec: np.ndarray, noise: NoiseState | None, capacity: float):
    """Actor output in [0,1]^3, optionally perturbed, scaled to kWh requests."""
    unit, _ = mlp.forward(nets.actor, obs_vec)
    if not np.isfinite(unit).all():
        raise NumericError("actor output became non-finite")
    if noise is not None:
        unit = unit + noise.sample()
    unit = np.clip(unit, 0.0, 1.0)
    action = Action(*(float(u) * capacity for u in unit))
    return action, noise


def critic_targets(batch: TransitionBatch, target_actor: MlpParams, target_critic: MlpParams,
                   gamma: float) -> np.ndarray:
    """Bootstrapped targets y = r + gamma * Q'(s', mu'(s')); terminal rows keep y = r."""
    a_next, _ = mlp.forward(target_actor, batch.s_next)
    q_next, _ = mlp.forward(target_critic, np.concatenate([batch.s_next, a_next], axis=1))
    return batch.r + gamma * (1.0 - batch.terminal) * q_next[:, 0]


def train_step(nets: AgentNets, batch: TransitionBatch, hp: HyperParams):
    """One critic regression step and one actor ascent step on a minibatch.

    Returns (nets, critic_loss, actor_objective), both evaluated before their
    respective updates. Target networks are left untouched; soft_update is a
    separate call.
    """
    n = len(batch.r)
    y = critic_targets(batch, nets.target_actor, nets.target_critic, hp.gamma)

    x_critic = np.concatenate([batch.s, batch.a], axis=1)
    q, cache = mlp.forward(nets.critic, x_critic)
    diff = q[:, 0] - y
    critic_loss = float(np.mean(diff * diff))
    if not np.isfinite(critic_loss):
        raise NumericError(f"critic loss became {critic_loss}")
    grad_out = (2.0 / n) * diff[:, None]
    critic_grads, _ = mlp.backward(nets.critic, cache, grad_out)
    mlp.adam_update(nets.critic, critic_grads, nets.critic_opt, hp.critic_lr)

    a_pi, actor_cache = mlp.forward(nets.actor, batch.s)
    q_pi, q_cache = mlp.forward(nets.critic, np.concatenate([batch.s, a_pi], axis=1))
    actor_objective = float(np.mean(q_pi))
    if not np.isfinite(actor_objective):
        raise NumericError(f"actor objective became {actor_objective}")
    _, input_grad = mlp.backward(nets.critic, q_cache, np.full((n, 1), 1.0 / n))
    dq_da = input_grad[:, batch.s.shape[1]:]
    actor_grads, _ = mlp.backward(nets.actor, actor_cache, dq_da)
    # ascend the objective: Adam minimizes, so negate
    neg = [(-gw, -gb) for gw, gb in actor_grads]
    mlp.adam_update(nets.actor, neg, nets.actor_opt, hp.actor_lr)
    return nets, critic_loss, actor_objective


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Elementwise target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau={tau} outside [0, 1]")
    if target.layer_sizes != online.layer_sizes:
        raise ShapeError(f"target sizes {target.layer_sizes} != online sizes {online.layer_sizes}")
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob
    return target


@dataclass
class SeedBundle:
    """Per-role seeds derived from one root so runs are reproducible."""

    root: int
    init: int
    noise: int
    sample: int
    week: int

    @classmethod
    def from_root(cls, root: int) -> "SeedBundle":
        ss = np.random.SeedSequence(root)
        init, noise, sample, week = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
        return cls(root=int(root), init=init, noise=noise, sample=sample, week=week)


class DdpgAgent:
    """Owns the networks, buffer, noise process and rng streams of one trial."""

    def __init__(self, hp: HyperParams, env_config: EnvConfig, scales: np.ndarray,
                 seeds: SeedBundle):
        self.hp = hp
        self.env_config = env_config
        self.scales = np.asarray(scales, dtype=float)
        self.seeds = seeds
        self.nets = build_nets(hp, seeds.init)
        self.buffer = ReplayBuffer(hp.buffer_capacity)
        self.noise = make_noise(hp, np.random.default_rng(seeds.noise))
        self.sample_rng = np.random.default_rng(seeds.sample)
        self.global_step = 0
        self.last_episode_stats = {"critic_loss": float("nan"), "actor_objective": float("nan")}

    def current_sigma(self) -> float:
        """Linear decay from noise_sigma to noise_sigma_end over the run."""
        hp = self.hp
        total = max(1, hp.training_iterations)
        frac = min(1.0, self.global_step / total)
        return hp.noise_sigma + (hp.noise_sigma_end - hp.noise_sigma) * frac

    def policy_action(self, obs: Observation, explore: bool) -> tuple[Action, np.ndarray]:
        obs_vec = normalize_observation(obs, self.scales)
        noise = None
        if explore:
            self.noise.sigma = self.current_sigma()
            noise = self.noise
        action, _ = act(self.nets, obs_vec, noise, self.env_config.capacity)
        unit = np.array([action.charge_solar, action.charge_grid, action.discharge])
        unit /= self.env_config.capacity
        return action, unit


def run_episode(agent: DdpgAgent, env: BatteryEnv, trace, mode: str = "train"):
    """One episode over a trace.

    In train mode every step acts with noise, stores the transition and, once
    the buffer can fill a batch, performs a train_step followed by a soft
    update of both targets. Eval mode is deterministic and side-effect free.
    Returns (episode_reward, transitions_stored).
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode={mode!r} must be 'train' or 'eval'")
    training = mode == "train"
    obs = env.reset(trace)
    if training:
        agent.noise.reset()
    total_reward = 0.0
    stored = 0
    losses = []
    objectives = []
    while not env.done:
        s_vec = normalize_observation(obs, agent.scales)
        action, unit = agent.policy_action(obs, explore=training)
        obs, reward, done, _ = env.step(action)
        total_reward += reward
        if training:
            s2_vec = normalize_observation(obs, agent.scales)
            agent.buffer.push(Transition(s_vec, unit, reward, s2_vec, done))
            stored += 1
            agent.global_step += 1
            batch = agent.buffer.sample(agent.hp.batch_size, agent.sample_rng)
            if batch is not None:
                _, critic_loss, actor_objective = train_step(agent.nets, batch, agent.hp)
                losses.append(critic_loss)
                objectives.append(actor_objective)
                soft_update(agent.nets.target_actor, agent.nets.actor, agent.hp.tau)
                soft_update(agent.nets.target_critic, agent.nets.critic, agent.hp.tau)
    if training:
        agent.last_episode_stats = {
            "critic_loss": float(np.mean(losses)) if losses else float("nan"),
            "actor_objective": float(np.mean(objectives)) if objectives else float("nan"),
        }
    return total_reward, stored


@dataclass
class Checkpoint:
    """Self-describing snapshot: networks, optimizer state, scales, config, seeds."""

    nets: AgentNets
    hp: HyperParams
    scales: np.ndarray
    env_config: EnvConfig
    seeds: SeedBundle
    version: int = CHECKPOINT_VERSION


def checkpoint_from_agent(agent: DdpgAgent) -> Checkpoint:
    return Checkpoint(
        nets=AgentNets(
            actor=mlp.clone_params(agent.nets.actor),
            critic=mlp.clone_params(agent.nets.critic),
            target_actor=mlp.clone_params(agent.nets.target_actor),
            target_critic=mlp.clone_params(agent.nets.target_critic),
            actor_opt=_clone_adam(agent.nets.actor_opt),
            critic_opt=_clone_adam(agent.nets.critic_opt),
        ),
        hp=agent.hp,
        scales=agent.scales.copy(),
        env_config=agent.env_config,
        seeds=agent.seeds,
    )


def _clone_adam(state: AdamState) -> AdamState:
    return AdamState(
        m=[(mw.copy(), mb.copy()) for mw, mb in state.m],
        v=[(vw.copy(), vb.copy()) for vw, vb in state.v],
        step=state.step, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write a versioned npz container with a JSON header and flat arrays."""
    arrays = {"scales": ckpt.scales}
    meta = {
        "version": ckpt.version,
        "hyperparams": asdict(ckpt.hp),
        "env_config": asdict(ckpt.env_config),
        "seeds": asdict(ckpt.seeds),
        "nets": {},
        "opts": {},
    }
    for name, params in (
        ("actor", ckpt.nets.actor),
        ("critic", ckpt.nets.critic),
        ("target_actor", ckpt.nets.target_actor),
        ("target_critic", ckpt.nets.target_critic),
    ):
        net_meta, net_arrays = mlp.pack_params(params, name)
        meta["nets"][name] = net_meta
        arrays.update(net_arrays)
    for name, opt in (("actor_opt", ckpt.nets.actor_opt), ("critic_opt", ckpt.nets.critic_opt)):
        opt_meta, opt_arrays = mlp.pack_adam(opt, name)
        meta["opts"][name] = opt_meta
        arrays.update(opt_arrays)
    arrays["meta_json"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> Checkpoint:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"].tobytes()).decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta['version']}")
        nets = {}
        for name in ("actor", "critic", "target_actor", "target_critic"):
            nets[name] = mlp.unpack_params(meta["nets"][name], data, name)
        opts = {}
        for name in ("actor_opt", "critic_opt"):
            ref = "actor" if name == "actor_opt" else "critic"
            opts[name] = mlp.unpack_adam(meta["opts"][name], data, name, len(nets[ref].weights))
        hp_dict = dict(meta["hyperparams"])
        hp_dict["actor_hiddens"] = tuple(hp_dict["actor_hiddens"])
        hp_dict["critic_hiddens"] = tuple(hp_dict["critic_hiddens"])
        return Checkpoint(
            nets=AgentNets(
                actor=nets["actor"], critic=nets["critic"],
                target_actor=nets["target_actor"], target_critic=nets["target_critic"],
                actor_opt=opts["actor_opt"], critic_opt=opts["critic_opt"],
            ),
            hp=HyperParams(**hp_dict),
            scales=np.asarray(data["scales"], dtype=float),
            env_config=EnvConfig(**meta["env_config"]),
            seeds=SeedBundle(**meta["seeds"]),
            version=int(meta["version"]),
        )


def agent_from_checkpoint(ckpt: Checkpoint) -> DdpgAgent:
    """Rebuild an agent around checkpointed networks (fresh buffer and noise)."""
    agent = DdpgAgent(ckpt.hp, ckpt.env_config, ckpt.scales, ckpt.seeds)
    agent.nets = ckpt.nets
    return agent


def evaluation_policy(ckpt: Checkpoint):
    """Observation -> Action closure for noise-free rollouts of a checkpoint."""

    def policy(obs: Observation) -> Action:
        obs_vec = normalize_observation(obs, ckpt.scales)
        action, _ = act(ckpt.nets, obs_vec, None, ckpt.env_config.capacity)
        return action

    return policy
