"""Soft actor-critic student plus the gradient recorder behind the teacher's reward.

The actor is a tanh-squashed diagonal Gaussian; two critics with Polyak-averaged
targets; fixed entropy temperature. Every SAC update hands back its raw
(pre-optimizer) gradient so an episode's learning progress can be summarised
as either the mean per-update gradient norm (``metric1``) or the norm of the
summed gradient divided by the number of updates (``metric2``).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import envs
from .errors import ConfigError, ContractError, NumericalError, ShapeError
from .nn import AdamState, NetConfig, ParamVector, adam_step, backward, concat, forward, init_network

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
GRAD_SOURCES = ("all", "actor_only", "critics_only")


@dataclass(frozen=True)
class SacConfig:
    # discount, temperature, batch size and network shape follow the full-scale
    # configuration; the remaining defaults are implementation choices.
    discount: float = 0.99
    temperature: float = 0.05
    batch_size: int = 256
    hidden_size: int = 256
    n_layers: int = 3
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    tau: float = 0.005
    updates_per_env_step: int = 1
    clear_buffer_on_assignment: bool = False
    buffer_capacity: int = 100_000
    grad_source: str = "all"
    actor_activation: str = "relu"
    critic_activation: str = "relu"

    def __post_init__(self):
        # 0 is accepted for both so bootstrap-free and entropy-free checks can run
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("discount must lie in [0, 1)", key="sac.discount")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be non-negative", key="sac.temperature")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1", key="sac.batch_size")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]", key="sac.tau")
        if self.updates_per_env_step < 0:
            raise ConfigError("updates_per_env_step must be >= 0", key="sac.updates_per_env_step")
        if self.buffer_capacity < 1:
            raise ConfigError("buffer_capacity must be >= 1", key="sac.buffer_capacity")
        if self.grad_source not in GRAD_SOURCES:
            raise ConfigError(f"grad_source must be one of {GRAD_SOURCES}", key="sac.grad_source")
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ConfigError("learning rates must be non-negative")


@dataclass(frozen=True, eq=False)
class SacNets:
    actor_config: NetConfig
    critic_config: NetConfig
    actor: ParamVector
    critic1: ParamVector
    critic2: ParamVector
    target1: ParamVector
    target2: ParamVector
    actor_opt: AdamState
    critic1_opt: AdamState
    critic2_opt: AdamState

    @property
    def obs_dim(self):
        return self.actor_config.input_dim

    @property
    def action_dim(self):
        return self.actor_config.output_dim // 2

    def fingerprint(self):
        """Hashable snapshot of every parameter and optimizer array."""
        parts = [self.actor, self.critic1, self.critic2, self.target1, self.target2]
        arrays = [p.values for p in parts]
        for opt in (self.actor_opt, self.critic1_opt, self.critic2_opt):
            arrays += [opt.m, opt.v, np.array([opt.t], dtype=np.float64)]
        return b"".join(a.tobytes() for a in arrays)


def make_sac_nets(obs_dim, action_dim, config: SacConfig, seed) -> SacNets:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = ss.spawn(3)
    actor_cfg = NetConfig(obs_dim, 2 * action_dim, config.hidden_size, config.n_layers, config.actor_activation)
    critic_cfg = NetConfig(obs_dim + action_dim, 1, config.hidden_size, config.n_layers, config.critic_activation)
    actor = init_network(actor_cfg, seeds[0])
    c1 = init_network(critic_cfg, seeds[1])
    c2 = init_network(critic_cfg, seeds[2])
    return SacNets(
        actor_cfg, critic_cfg, actor, c1, c2, c1, c2,
        AdamState.zeros(len(actor)), AdamState.zeros(len(c1)), AdamState.zeros(len(c2)),
    )


class Transitions(NamedTuple):
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray  # 1.0 only for true terminations; time-limit cut-offs still bootstrap


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions."""

    def __init__(self, capacity, obs_dim, action_dim):
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.action = np.zeros((self.capacity, action_dim))
        self.reward = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.pos = 0
        self.size = 0
        self.n_clears = 0

    def __len__(self):
        return self.size

    def push(self, obs, action, reward, next_obs, done):
        i = self.pos
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def clear(self):
        self.pos = 0
        self.size = 0
        self.n_clears += 1

    def sample(self, batch_size, rng: np.random.Generator) -> Transitions:
        if self.size < batch_size:
            raise ContractError(f"cannot sample {batch_size} transitions from a buffer of {self.size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Transitions(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def fingerprint(self):
        return b"".join(
            a.tobytes() for a in (self.obs, self.action, self.reward, self.next_obs, self.done)
        ) + np.array([self.pos, self.size]).tobytes()


def _log1m_tanh_sq(u):
    # log(1 - tanh(u)^2), stable for large |u|
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _policy_head(nets, obs):
    out, cache = forward(nets.actor, nets.actor_config, obs)
    a_dim = nets.action_dim
    mu = out[..., :a_dim]
    raw_ls = out[..., a_dim:]
    log_std = np.clip(raw_ls, LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std, raw_ls, cache


def squashed_sample(mu, log_std, eps):
    """Reparameterised tanh-Gaussian sample and its log-density."""
    std = np.exp(log_std)
    u = mu + std * eps
    a = np.tanh(u)
    logp = np.sum(-0.5 * eps * eps - log_std - _HALF_LOG_2PI - _log1m_tanh_sq(u), axis=-1)
    return a, logp


def sample_action(nets: SacNets, obs, deterministic=False, rng=None):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != nets.obs_dim:
        raise ShapeError(f"observation must have {nets.obs_dim} entries")
    mu, log_std, _, _ = _policy_head(nets, obs)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(log_std)):
        raise NumericalError("actor produced non-finite output")
    if deterministic:
        a = np.tanh(mu)
    else:
        eps = rng.standard_normal(mu.shape)
        a, _ = squashed_sample(mu, log_std, eps)
    # tanh saturates to exactly +-1 in float64 for |u| > ~19
    return np.clip(a, -1.0 + 1e-12, 1.0 - 1e-12)


def _q(params, cfg, obs, action):
    return forward(params, cfg, np.concatenate([obs, action], axis=-1))


def critic_target(nets: SacNets, batch: Transitions, config: SacConfig, eps_next):
    """Soft Bellman target ``r + discount * (1 - done) * (min target Q - temperature * log pi)``."""
    mu, log_std, _, _ = _policy_head(nets, batch.next_obs)
    a_next, logp_next = squashed_sample(mu, log_std, eps_next)
    q1, _ = _q(nets.target1, nets.critic_config, batch.next_obs, a_next)
    q2, _ = _q(nets.target2, nets.critic_config, batch.next_obs, a_next)
    soft_v = np.minimum(q1[:, 0], q2[:, 0]) - config.temperature * logp_next
    return batch.reward + config.discount * (1.0 - batch.done) * soft_v


def critic_loss_and_grad(params, cfg, obs, action, target):
    """Mean squared error to fixed targets, and its parameter gradient."""
    q, cache = _q(params, cfg, obs, action)
    err = q[:, 0] - target
    n = err.shape[0]
    loss = float(np.mean(err * err))
    grad = backward(params, cfg, cache, (2.0 / n) * err[:, None])
    return loss, grad


def actor_loss_and_grad(nets: SacNets, obs, eps, temperature):
    """Reparameterised loss ``mean(temperature * log pi(a|s) - min(Q1, Q2)(s, a))``.

    ``eps`` is the standard-normal noise; critics are held fixed.
    """
    mu, log_std, raw_ls, cache = _policy_head(nets, obs)
    a, logp = squashed_sample(mu, log_std, eps)
    cfg = nets.critic_config
    q1, cache1 = _q(nets.critic1, cfg, obs, a)
    q2, cache2 = _q(nets.critic2, cfg, obs, a)
    pick1 = (q1[:, 0] <= q2[:, 0]).astype(np.float64)[:, None]
    _, gin1 = backward(nets.critic1, cfg, cache1, pick1, return_input_grad=True)
    _, gin2 = backward(nets.critic2, cfg, cache2, 1.0 - pick1, return_input_grad=True)
    dq_da = (gin1 + gin2)[:, nets.obs_dim :]
    q_min = np.minimum(q1[:, 0], q2[:, 0])
    n = obs.shape[0]
    loss = float(np.mean(temperature * logp - q_min))

    std = np.exp(log_std)
    dq_du = dq_da * (1.0 - a * a)
    g_mu = (temperature * 2.0 * a - dq_du) / n
    g_ls = (temperature * (2.0 * a * std * eps - 1.0) - dq_du * std * eps) / n
    g_ls = g_ls * ((raw_ls > LOG_STD_MIN) & (raw_ls < LOG_STD_MAX))
    grad = backward(nets.actor, nets.actor_config, cache, np.concatenate([g_mu, g_ls], axis=1))
    return loss, grad


def polyak(target: ParamVector, source: ParamVector, tau):
    return target.with_values((1.0 - tau) * target.values + tau * source.values)


def select_grad(actor_grad, c1_grad, c2_grad, source):
    if source == "actor_only":
        return concat([actor_grad])
    if source == "critics_only":
        return concat([c1_grad, c2_grad])
    return concat([actor_grad, c1_grad, c2_grad])


def sac_update(nets: SacNets, batch: Transitions, config: SacConfig, rng: np.random.Generator):
    """One SAC gradient step on every network.

    Returns ``(new_nets, update_grad)`` where ``update_grad`` is the raw
    gradient taken before any optimizer step, concatenated per
    ``config.grad_source``.
    """
    n = batch.obs.shape[0]
    if n != config.batch_size:
        raise ContractError(f"batch has {n} transitions, config expects {config.batch_size}")
    a_dim = nets.action_dim
    eps_next = rng.standard_normal((n, a_dim))
    eps = rng.standard_normal((n, a_dim))

    y = critic_target(nets, batch, config, eps_next)
    cfg = nets.critic_config
    _, g1 = critic_loss_and_grad(nets.critic1, cfg, batch.obs, batch.action, y)
    _, g2 = critic_loss_and_grad(nets.critic2, cfg, batch.obs, batch.action, y)
    _, ga = actor_loss_and_grad(nets, batch.obs, eps, config.temperature)

    actor, actor_opt = adam_step(nets.actor, ga, nets.actor_opt, config.actor_lr)
    c1, c1_opt = adam_step(nets.critic1, g1, nets.critic1_opt, config.critic_lr)
    c2, c2_opt = adam_step(nets.critic2, g2, nets.critic2_opt, config.critic_lr)
    new = replace(
        nets, actor=actor, critic1=c1, critic2=c2,
        target1=polyak(nets.target1, c1, config.tau), target2=polyak(nets.target2, c2, config.tau),
        actor_opt=actor_opt, critic1_opt=c1_opt, critic2_opt=c2_opt,
    )
    return new, select_grad(ga, g1, g2, config.grad_source)


class GradRecord:
    """Per-episode accumulator of update gradients."""

    def __init__(self):
        self.norms = []
        self.total = None

    @property
    def T(self):
        return len(self.norms)

    def add(self, grad):
        g = grad.values if isinstance(grad, ParamVector) else np.asarray(grad, dtype=np.float64)
        self.norms.append(float(np.linalg.norm(g)))
        self.total = g.copy() if self.total is None else self.total + g


def finalize_metrics(record: GradRecord):
    """``(mean_t |g_t|, |sum_t g_t| / T)``; both zero when no update happened."""
    if record.T == 0:
        return 0.0, 0.0
    metric1 = float(np.sum(record.norms)) / record.T
    metric2 = float(np.linalg.norm(record.total)) / record.T
    return metric1, metric2


class EpisodeOutcome(NamedTuple):
    episode_return: float
    record: GradRecord
    nets: SacNets
    buffer: ReplayBuffer
    steps: int
    success: bool
    start_state: envs.EnvState
    final_state: envs.EnvState


def run_assigned_episode(nets, buffer, spec, rho0, config: SacConfig, rng, max_steps=None) -> EpisodeOutcome:
    """Play one training episode from ``rho0``, updating the student online.

    ``max_steps`` truncates the episode early (used to honour a global step
    budget).
    """
    if config.clear_buffer_on_assignment:
        buffer.clear()
    state, obs = envs.reset(spec, rho0)
    start = state
    record = GradRecord()
    total = 0.0
    steps = 0
    limit = spec.max_episode_steps if max_steps is None else min(max_steps, spec.max_episode_steps)
    success = False
    while steps < limit:
        action = sample_action(nets, obs, deterministic=False, rng=rng)
        res = envs.step(spec, state, action)
        buffer.push(obs, action, res.reward, res.observation, res.success)
        total += res.reward
        steps += 1
        state, obs = res.next_state, res.observation
        if len(buffer) >= config.batch_size:
            for _ in range(config.updates_per_env_step):
                nets, grad = sac_update(nets, buffer.sample(config.batch_size, rng), config, rng)
                record.add(grad)
        if res.done:
            success = res.success
            break
    return EpisodeOutcome(total, record, nets, buffer, steps, success, start, state)
