"""REINFORCE teacher that picks start states for the student.

The teacher sees the previous ``(start state, episode return)`` pair, samples a
raw Gaussian action, and squashes it into the environment's legal start box.
Its reward is one of the student's gradient-norm learning-progress metrics.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, NumericalError, ShapeError
from .nn import AdamState, NetConfig, ParamVector, adam_step, backward, forward, init_network

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
REWARD_METRICS = ("metric1", "metric2")
NORMALIZATIONS = ("none", "zscore")


@dataclass(frozen=True)
class TeacherConfig:
    # k, update count, lr and init_log_std are implementation choices
    k: int = 8
    n_teacher_updates: int = 4
    lr: float = 1e-3
    reward_metric: str = "metric1"
    init_log_std: float = 0.0
    reward_normalization: str = "zscore"
    hidden_size: int = 64
    n_layers: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1", key="teacher.k")
        if self.n_teacher_updates < 1:
            raise ConfigError("n_teacher_updates must be >= 1", key="teacher.n_teacher_updates")
        if self.lr < 0:
            raise ConfigError("lr must be non-negative", key="teacher.lr")
        if self.reward_metric not in REWARD_METRICS:
            raise ConfigError(f"reward_metric must be one of {REWARD_METRICS}", key="teacher.reward_metric")
        if self.reward_normalization not in NORMALIZATIONS:
            raise ConfigError(
                f"reward_normalization must be one of {NORMALIZATIONS}", key="teacher.reward_normalization"
            )
        if not LOG_STD_MIN <= self.init_log_std <= LOG_STD_MAX:
            raise ConfigError(f"init_log_std must lie in [{LOG_STD_MIN}, {LOG_STD_MAX}]", key="teacher.init_log_std")


@dataclass(frozen=True, eq=False)
class TeacherObservation:
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class TeacherPolicy:
    net_config: NetConfig
    params: ParamVector
    log_std: np.ndarray
    opt: AdamState

    def flat(self):
        return np.concatenate([self.params.values, self.log_std])

    def fingerprint(self):
        return self.flat().tobytes() + self.opt.m.tobytes() + self.opt.v.tobytes()


@dataclass(frozen=True, eq=False)
class TeacherSample:
    observation: TeacherObservation
    raw_action: np.ndarray
    rho0: np.ndarray
    episode_return: float
    reward: float


def make_teacher(init_dim, config: TeacherConfig, seed) -> TeacherPolicy:
    net_cfg = NetConfig(init_dim + 1, init_dim, config.hidden_size, config.n_layers, "tanh")
    params = init_network(net_cfg, seed)
    n = len(params) + init_dim
    return TeacherPolicy(net_cfg, params, np.full(init_dim, float(config.init_log_std)), AdamState.zeros(n))


class History:
    """The teacher's view of the student: last assignment and its return.

    Returns are scaled by the largest magnitude seen so far, so both parts of
    the observation stay within [-1, 1].
    """

    def __init__(self, spec):
        self.spec = spec
        self.rho0 = None
        self.episode_return = 0.0
        self.return_scale = 0.0

    def observation(self) -> TeacherObservation:
        lo, hi = self.spec.init_lower, self.spec.init_upper
        if self.rho0 is None:
            scaled = np.zeros(lo.shape)
        else:
            width = hi - lo
            safe = np.where(width > 0, width, 1.0)
            scaled = np.where(width > 0, 2.0 * (self.rho0 - lo) / safe - 1.0, 0.0)
        r = self.episode_return / self.return_scale if self.return_scale > 0 else 0.0
        return TeacherObservation(np.append(scaled, r))

    def update(self, rho0, episode_return):
        self.rho0 = np.asarray(rho0, dtype=np.float64)
        self.episode_return = float(episode_return)
        self.return_scale = max(self.return_scale, abs(self.episode_return))


def squash(spec, raw):
    """Map raw actions onto the legal box; tanh keeps the result inside it."""
    raw = np.asarray(raw, dtype=np.float64)
    return spec.init_lower + 0.5 * (np.tanh(raw) + 1.0) * (spec.init_upper - spec.init_lower)


def _mean_and_log_std(policy, obs_values):
    mu, cache = forward(policy.params, policy.net_config, obs_values)
    return mu, np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX), cache


def assign_task(policy: TeacherPolicy, obs: TeacherObservation, spec, rng):
    """Sample a start state. Returns ``(rho0, raw_action)``."""
    x = np.asarray(obs.values, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("teacher observation is not finite")
    mu, log_std, _ = _mean_and_log_std(policy, x)
    if not np.all(np.isfinite(mu)):
        raise NumericalError("teacher policy produced non-finite mean")
    raw = mu + np.exp(log_std) * rng.standard_normal(mu.shape)
    return squash(spec, raw), raw


def mean_assignment(policy: TeacherPolicy, obs: TeacherObservation, spec):
    """The squashed policy mean, i.e. the assignment with the noise switched off."""
    mu, _, _ = _mean_and_log_std(policy, np.asarray(obs.values, dtype=np.float64))
    return squash(spec, mu)


def gaussian_log_prob(mu, log_std, raw):
    z = (raw - mu) * np.exp(-log_std)
    return np.sum(-_HALF_LOG_2PI - log_std - 0.5 * z * z, axis=-1)


def log_prob(policy: TeacherPolicy, obs: TeacherObservation, raw_action):
    """Diagonal-Gaussian log-density of the raw (pre-squash) action."""
    mu, log_std, _ = _mean_and_log_std(policy, np.asarray(obs.values, dtype=np.float64))
    raw = np.asarray(raw_action, dtype=np.float64)
    if raw.shape[-1] != mu.shape[-1]:
        raise ShapeError("raw action does not match the policy's output width")
    return float(gaussian_log_prob(mu, log_std, raw))


def advantages(rewards, normalization="zscore", eps=1e-8):
    r = np.asarray(rewards, dtype=np.float64)
    if r.size == 0 or np.all(r == r[0]):
        return np.zeros_like(r)
    adv = r - r.mean()
    if normalization == "zscore":
        adv = adv / (adv.std() + eps)
    return adv


def surrogate_loss_and_grad(policy: TeacherPolicy, obs_batch, raw_batch, adv):
    """Loss ``-(1/k) sum_i A_i log pi(raw_i | obs_i)`` and its gradient.

    The gradient is flat over ``[network params, log_std]``. ``obs_batch``
    and ``raw_batch`` are stacked arrays, one row per sample.
    """
    mu, log_std, cache = _mean_and_log_std(policy, obs_batch)
    k = raw_batch.shape[0]
    logp = gaussian_log_prob(mu, log_std, raw_batch)
    loss = -float(np.mean(adv * logp))
    inv_var = np.exp(-2.0 * log_std)
    diff = raw_batch - mu
    w = -adv[:, None] / k
    g_mu = w * diff * inv_var  # d loss / d mu
    g_ls = np.sum(w * (diff * diff * inv_var - 1.0), axis=0)
    g_ls = g_ls * ((policy.log_std > LOG_STD_MIN) & (policy.log_std < LOG_STD_MAX))
    g_net = backward(policy.params, policy.net_config, cache, g_mu)
    return loss, np.concatenate([g_net.values, g_ls])


def _stack(dataset):
    obs = np.stack([np.asarray(s.observation.values, dtype=np.float64) for s in dataset])
    raw = np.stack([np.asarray(s.raw_action, dtype=np.float64) for s in dataset])
    return obs, raw


def policy_gradient(policy: TeacherPolicy, dataset, config: TeacherConfig):
    """Gradient of the surrogate loss on ``dataset`` (not yet applied)."""
    obs, raw = _stack(dataset)
    adv = advantages([s.reward for s in dataset], config.reward_normalization)
    return surrogate_loss_and_grad(policy, obs, raw, adv)[1]


def reinforce_update(policy: TeacherPolicy, dataset, config: TeacherConfig) -> TeacherPolicy:
    """``n_teacher_updates`` Adam steps on one fixed batch of k samples."""
    if len(dataset) != config.k:
        raise ContractError(f"teacher dataset has {len(dataset)} samples, expected k={config.k}")
    adv = advantages([s.reward for s in dataset], config.reward_normalization)
    if not np.any(adv):
        # nothing to learn; skipping also keeps Adam momentum from moving phi
        return policy
    obs, raw = _stack(dataset)
    n_net = len(policy.params)
    for _ in range(config.n_teacher_updates):
        _, grad = surrogate_loss_and_grad(policy, obs, raw, adv)
        flat = ParamVector(policy.flat())
        flat, opt = adam_step(flat, grad, policy.opt, config.lr)
        policy = replace(
            policy,
            params=policy.params.with_values(flat.values[:n_net]),
            log_std=np.clip(flat.values[n_net:], LOG_STD_MIN, LOG_STD_MAX),
            opt=opt,
        )
    return policy
