"""
file: sac_engine.py
brief: soft actor-critic with twin critics, target networks and automatic entropy tuning
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np  # pylint: disable=import-error

from .cmdp_envs import CmdpInstance, ContextPipeline, ContextSchedule
from .hyper_adapter import ThetaCache
from .nn_core import (
    ParamStore,
    adam_step,
    backward,
    exp,
    minimum,
    no_grad,
    reduce_mean,
    soft_update,
    square,
)
from .policy_zoo import EnvDims, Policy, PolicyArch, actor_forward, critic_forward, init_actor, init_critic


@dataclass
class SacConfig:
    total_timesteps: int = 100_000
    buffer_size: int = 1_000_000
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 256
    first_learning_timestep: int = 5000
    policy_lr: float = 3e-4
    critic_lr: float = 1e-3
    policy_update_freq: int = 2
    target_update_freq: int = 1
    auto_entropy: bool = True
    alpha: float = 0.2
    # kept for completeness of the hyperparameter table; SAC does not use them
    exploration_noise: float = 0.1
    noise_clip: float = 0.5
    snapshot_every: int = 10_000

    def __post_init__(self):
        positive = ("total_timesteps", "buffer_size", "batch_size", "policy_update_freq", "target_update_freq")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"sac.{name} must be positive, got {getattr(self, name)}")
        if self.first_learning_timestep < 0 or self.snapshot_every < 1:
            raise ValueError("sac.first_learning_timestep must be >= 0 and sac.snapshot_every >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"sac.gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"sac.tau must lie in (0, 1], got {self.tau}")
        if self.policy_lr <= 0 or self.critic_lr <= 0 or self.alpha < 0:
            raise ValueError("sac learning rates must be positive and alpha non-negative")

    @classmethod
    def from_dict(cls, config: dict | None) -> SacConfig:
        config = dict(config or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(config) - known)
        if unknown:
            raise ValueError(f"unknown sac keys {unknown}")
        return cls(**config)

    def to_dict(self) -> dict:
        return asdict(self)


def seed_rng(master_seed: int, seed: int) -> np.random.Generator:
    """Independent stream per (master seed, seed) pair; adding seeds leaves existing streams unchanged."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(seed)]))


class ReplayBuffer:
    """Ring buffer of transitions; the oldest entries are overwritten first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, context_dim: int):
        self.capacity = capacity
        self._ptr = 0
        self._size = 0
        self.obs = np.zeros((capacity, state_dim))
        self.next_obs = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.terminated = np.zeros(capacity)
        self.contexts = np.zeros((capacity, context_dim))

    def store(self, obs, action, reward, next_obs, terminated, context):
        idx = self._ptr % self.capacity
        self.obs[idx] = obs
        self.actions[idx] = action
        self.rewards[idx] = reward
        self.next_obs[idx] = next_obs
        self.terminated[idx] = float(terminated)
        self.contexts[idx] = context
        self._ptr += 1
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self._size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        indices = rng.integers(0, self._size, size=batch_size)
        return {
            "obs": self.obs[indices],
            "actions": self.actions[indices],
            "rewards": self.rewards[indices],
            "next_obs": self.next_obs[indices],
            "terminated": self.terminated[indices],
            "contexts": self.contexts[indices],
        }

    def __len__(self):
        return self._size


class SacAgent:
    def __init__(self, arch: PolicyArch, dims: EnvDims, cfg: SacConfig, rng: np.random.Generator):
        self.arch = arch
        self.dims = dims
        self.cfg = cfg
        self.actor = init_actor(arch, dims, rng)
        self.critic = init_critic(arch, dims, rng)
        self.critic_target = self.critic.copy()
        self.log_alpha = ParamStore()
        self.log_alpha.add("log_alpha", np.zeros(1))
        self.target_entropy = -float(dims.action_dim)
        self.actor_cache = ThetaCache()
        self.target_cache = ThetaCache()
        self.num_updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"][0])) if self.cfg.auto_entropy else self.cfg.alpha

    def policy(self) -> Policy:
        return Policy(self.arch, self.dims, self.actor, self.actor_cache)


@dataclass
class SacLosses:
    critic: float
    actor: float | None = None
    alpha: float | None = None


def td_target(rewards, terminated, next_min_q, next_log_pi, alpha: float, gamma: float) -> np.ndarray:
    """r + gamma (1 - terminated) (min_j Q'_j(s', a') - alpha log pi(a'|s'))."""
    return rewards + (1.0 - terminated) * gamma * (next_min_q - alpha * next_log_pi)


def critic_loss(agent: SacAgent, batch: dict, targets: np.ndarray):
    q1 = critic_forward(agent.arch, agent.dims, agent.critic, batch["obs"], batch["actions"], batch["contexts"], "q1")
    q2 = critic_forward(agent.arch, agent.dims, agent.critic, batch["obs"], batch["actions"], batch["contexts"], "q2")
    return reduce_mean(square(q1 - targets)) + reduce_mean(square(q2 - targets))


def sac_update(batch: dict, agent: SacAgent, cfg: SacConfig, rng: np.random.Generator, global_step: int) -> SacLosses:
    """One gradient step on both critics; actor and temperature every policy_update_freq steps."""
    arch, dims = agent.arch, agent.dims
    obs, contexts = batch["obs"], batch["contexts"]

    with no_grad():
        next_dist = actor_forward(arch, dims, agent.actor, batch["next_obs"], contexts, agent.actor_cache)
        next_actions, next_log_pi = next_dist.sample(rng)
        q1_next = critic_forward(
            arch, dims, agent.critic_target, batch["next_obs"], next_actions.data, contexts, "q1", agent.target_cache
        )
        q2_next = critic_forward(
            arch, dims, agent.critic_target, batch["next_obs"], next_actions.data, contexts, "q2", agent.target_cache
        )
        targets = td_target(
            batch["rewards"],
            batch["terminated"],
            np.minimum(q1_next.data, q2_next.data),
            next_log_pi.data,
            agent.alpha,
            cfg.gamma,
        )

    loss = critic_loss(agent, batch, targets)
    agent.critic.zero_grad()
    backward(loss)
    adam_step(agent.critic, cfg.critic_lr)
    losses = SacLosses(critic=float(loss.data))

    if global_step % cfg.policy_update_freq == 0:
        for _ in range(cfg.policy_update_freq):
            dist = actor_forward(arch, dims, agent.actor, obs, contexts)
            actions, log_pi = dist.sample(rng)
            with agent.critic.frozen():
                q1 = critic_forward(arch, dims, agent.critic, obs, actions, contexts, "q1")
                q2 = critic_forward(arch, dims, agent.critic, obs, actions, contexts, "q2")
            actor_loss = reduce_mean(agent.alpha * log_pi - minimum(q1, q2))
            agent.actor.zero_grad()
            backward(actor_loss)
            adam_step(agent.actor, cfg.policy_lr)
            losses.actor = float(actor_loss.data)

            if cfg.auto_entropy:
                with no_grad():
                    _, log_pi = actor_forward(arch, dims, agent.actor, obs, contexts, agent.actor_cache).sample(rng)
                alpha_loss = reduce_mean(
                    -(exp(agent.log_alpha.leaf("log_alpha")) * (log_pi.data + agent.target_entropy))
                )
                agent.log_alpha.zero_grad()
                backward(alpha_loss)
                adam_step(agent.log_alpha, cfg.critic_lr)
                losses.alpha = float(alpha_loss.data)

    if global_step % cfg.target_update_freq == 0:
        soft_update(agent.critic_target, agent.critic, cfg.tau)
    agent.num_updates += 1
    return losses


@dataclass
class TrainResult:
    agent: SacAgent
    records: list = field(default_factory=list)
    episode_returns: list = field(default_factory=list)
    num_updates: int = 0
    buffer: ReplayBuffer | None = None


def train(
    env,
    arch: PolicyArch,
    cfg: SacConfig,
    schedule: ContextSchedule,
    pipeline: ContextPipeline,
    seed: int,
    master_seed: int = 0,
    snapshot_fn: Callable[[SacAgent, int], list] | None = None,
) -> TrainResult:
    """
    Train one agent

    Parameters
    -----------------
    - env: environment family (OdeEnv, CartPoleEnv)
    - arch: actor/critic architecture
    - cfg: SAC hyperparameters
    - schedule: yields (raw training context, start state) per episode
    - pipeline: turns raw contexts into what the policy sees
    - seed, master_seed: select the random stream
    - snapshot_fn: called every cfg.snapshot_every steps, returns learning-curve records

    Returns
    -----------------
    - TrainResult with the agent, curve records and per-episode training returns
    """
    rng = seed_rng(master_seed, seed)
    dims = EnvDims(env.state_dim, env.action_dim, pipeline.policy_dim)
    agent = SacAgent(arch, dims, cfg, rng)
    buffer = ReplayBuffer(min(cfg.buffer_size, cfg.total_timesteps), dims.state_dim, dims.action_dim, dims.context_dim)
    result = TrainResult(agent, buffer=buffer)
    policy = agent.policy()

    def start_episode():
        raw, start = next(schedule)
        instance = CmdpInstance(env, raw)
        obs = instance.reset(rng, start)
        return instance, obs, pipeline.process(raw[None, :], "train", rng)[0]

    instance, obs, context = start_episode()
    episode_return = 0.0
    for global_step in range(cfg.total_timesteps):
        if global_step < cfg.first_learning_timestep:
            action = rng.uniform(-1.0, 1.0, size=dims.action_dim)
        else:
            action = policy.sample_action(obs[None, :], context[None, :], rng)[0]
        next_obs, reward, terminated, truncated = instance.step(action)
        buffer.store(obs, action, reward, next_obs, terminated, context)
        episode_return += reward
        if terminated or truncated:
            result.episode_returns.append(episode_return)
            episode_return = 0.0
            instance, obs, context = start_episode()
        else:
            obs = next_obs

        if global_step >= cfg.first_learning_timestep:
            sac_update(buffer.sample(cfg.batch_size, rng), agent, cfg, rng, global_step)
            result.num_updates += 1
        if snapshot_fn is not None and (global_step + 1) % cfg.snapshot_every == 0:
            result.records.extend(snapshot_fn(agent, global_step + 1))
    return result
