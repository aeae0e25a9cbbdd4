"""Small deterministic control tasks with teacher-settable initial states.

Three kinds share one functional interface (``reset``/``step``):

* ``point_arena``: 2-D double-integrator point mass in a walled square,
  dense reward ``-|p - goal|``. Start state ``(x, y, vx, vy)``.
* ``relocate_toy``: a 3-D "hand" point that carries a ball once it is within
  the grasp radius; dense reward ``-|hand - ball| - |ball - goal|``.
  Start state ``(hand xyz, hand velocity xyz, ball xyz)``.
* ``chain_world``: N cells, move left/right by the sign of a scalar action,
  reward 1 on reaching the rightmost cell. Start state is the cell index.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError

log = logging.getLogger(__name__)

KINDS = ("point_arena", "relocate_toy", "chain_world")


@dataclass(frozen=True, eq=False)
class EnvSpec:
    kind: str
    obs_dim: int
    action_dim: int
    init_dim: int
    init_lower: np.ndarray
    init_upper: np.ndarray
    max_episode_steps: int
    goal: np.ndarray
    dt: float = 0.1
    force_scale: float = 1.0
    grasp_radius: float = 0.25
    success_radius: float = 0.2
    bound: float = 5.0  # walls at +-bound on every axis
    n_cells: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown environment kind {self.kind!r}", key="env.kind")
        lo = np.asarray(self.init_lower, dtype=np.float64)
        hi = np.asarray(self.init_upper, dtype=np.float64)
        object.__setattr__(self, "init_lower", lo)
        object.__setattr__(self, "init_upper", hi)
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=np.float64))
        if lo.shape != (self.init_dim,) or hi.shape != (self.init_dim,):
            raise ShapeError("init bounds must have length init_dim")
        if np.any(lo > hi):
            raise ConfigError("init_lower must not exceed init_upper")
        if self.obs_dim < 1 or self.action_dim < 1:
            raise ConfigError("obs_dim and action_dim must be >= 1")
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be >= 1", key="env.max_episode_steps")
        for name in ("dt", "force_scale", "grasp_radius", "success_radius", "bound"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive", key=f"env.{name}")

    def diameter(self):
        """Diagonal of the walled workspace."""
        dims = 2 if self.kind == "point_arena" else 3
        return 2.0 * self.bound * np.sqrt(dims)


def point_arena(dt=0.1, force_scale=1.0, success_radius=0.2, bound=5.0, max_episode_steps=200,
                goal=(3.0, 3.0), max_init_speed=1.0):
    v = max_init_speed
    return EnvSpec(
        kind="point_arena", obs_dim=4, action_dim=2, init_dim=4,
        init_lower=np.array([-bound, -bound, -v, -v]),
        init_upper=np.array([bound, bound, v, v]),
        max_episode_steps=max_episode_steps, goal=np.array(goal, dtype=np.float64),
        dt=dt, force_scale=force_scale, success_radius=success_radius, bound=bound,
    )


def relocate_toy(dt=0.1, force_scale=1.0, grasp_radius=0.25, success_radius=0.2, bound=2.0,
                 max_episode_steps=300, goal=(1.0, 0.0, 1.0), max_init_speed=1.0):
    v = max_init_speed
    lo = np.concatenate([np.full(3, -bound), np.full(3, -v), np.full(3, -bound)])
    return EnvSpec(
        kind="relocate_toy", obs_dim=12, action_dim=3, init_dim=9,
        init_lower=lo, init_upper=-lo,
        max_episode_steps=max_episode_steps, goal=np.array(goal, dtype=np.float64),
        dt=dt, force_scale=force_scale, grasp_radius=grasp_radius,
        success_radius=success_radius, bound=bound,
    )


def chain_world(n_cells=10, max_episode_steps=50):
    if n_cells < 2:
        raise ConfigError("chain_world needs at least 2 cells", key="env.n_cells")
    return EnvSpec(
        kind="chain_world", obs_dim=n_cells, action_dim=1, init_dim=1,
        init_lower=np.zeros(1), init_upper=np.array([n_cells - 1.0]),
        max_episode_steps=max_episode_steps, goal=np.array([n_cells - 1.0]),
        n_cells=n_cells,
    )


_FACTORIES = {"point_arena": point_arena, "relocate_toy": relocate_toy, "chain_world": chain_world}


def make_env(kind, **constants) -> EnvSpec:
    """Build a spec by kind name, overriding any of the factory's constants."""
    try:
        factory = _FACTORIES[kind]
    except KeyError:
        raise ConfigError(f"unknown environment kind {kind!r}", key="env.kind") from None
    try:
        return factory(**constants)
    except TypeError as exc:
        raise ConfigError(f"bad constant for {kind}: {exc}") from None


@dataclass(frozen=True, eq=False)
class EnvState:
    pos: np.ndarray  # point / hand position; chain cell as a 1-vector
    vel: np.ndarray
    ball: np.ndarray | None = None
    step: int = 0


@dataclass(frozen=True, eq=False)
class StepResult:
    next_state: EnvState
    observation: np.ndarray
    reward: float
    done: bool
    success: bool  # done because the task was solved, not because time ran out


def observe(spec: EnvSpec, state: EnvState) -> np.ndarray:
    if spec.kind == "point_arena":
        return np.concatenate([(state.pos - spec.goal) / 2.5, state.vel])
    if spec.kind == "relocate_toy":
        return np.concatenate([
            state.pos / spec.bound, state.vel,
            (state.ball - state.pos) / spec.bound, (spec.goal - state.ball) / spec.bound,
        ])
    obs = np.zeros(spec.n_cells)
    obs[int(state.pos[0])] = 1.0
    return obs


def clamp_init(spec: EnvSpec, rho0) -> np.ndarray:
    values = np.asarray(rho0, dtype=np.float64).reshape(-1)
    if values.size != spec.init_dim:
        raise ShapeError(f"initial state must have {spec.init_dim} entries, got {values.size}")
    if not np.all(np.isfinite(values)):
        raise NumericalError("non-finite initial state")
    clipped = np.clip(values, spec.init_lower, spec.init_upper)
    if np.any(clipped != values):
        log.warning("initial state %s outside bounds; clamped to %s", values, clipped)
    return clipped


def reset(spec: EnvSpec, rho0):
    """Map an initial state onto a concrete simulator state at step 0."""
    rho = clamp_init(spec, rho0)
    if spec.kind == "point_arena":
        state = EnvState(pos=rho[:2].copy(), vel=rho[2:4].copy())
    elif spec.kind == "relocate_toy":
        state = EnvState(pos=rho[0:3].copy(), vel=rho[3:6].copy(), ball=rho[6:9].copy())
    else:
        state = EnvState(pos=np.array([float(np.rint(rho[0]))]), vel=np.zeros(1))
    return state, observe(spec, state)


def _integrate(spec, pos, vel, action):
    vel = vel + spec.dt * action * spec.force_scale
    pos = pos + spec.dt * vel
    hit = np.abs(pos) > spec.bound
    if np.any(hit):
        pos = np.clip(pos, -spec.bound, spec.bound)
        vel = np.where(hit, 0.0, vel)
    return pos, vel


def step(spec: EnvSpec, state: EnvState, action) -> StepResult:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.size != spec.action_dim:
        raise ShapeError(f"action must have {spec.action_dim} entries, got {a.size}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite action")
    a = np.clip(a, -1.0, 1.0)
    t = state.step + 1

    if spec.kind == "point_arena":
        pos, vel = _integrate(spec, state.pos, state.vel, a)
        nxt = EnvState(pos, vel, None, t)
        dist = float(np.linalg.norm(pos - spec.goal))
        reward = -dist
        success = dist < spec.success_radius
    elif spec.kind == "relocate_toy":
        pos, vel = _integrate(spec, state.pos, state.vel, a)
        ball = state.ball
        if np.linalg.norm(state.pos - state.ball) < spec.grasp_radius:
            ball = ball + (pos - state.pos)
        nxt = EnvState(pos, vel, ball, t)
        ball_dist = float(np.linalg.norm(ball - spec.goal))
        reward = -float(np.linalg.norm(pos - ball)) - ball_dist
        success = ball_dist < spec.success_radius
    else:
        cell = state.pos[0] + (1.0 if a[0] > 0 else -1.0)
        cell = min(max(cell, 0.0), spec.n_cells - 1.0)
        nxt = EnvState(np.array([cell]), state.vel, None, t)
        success = cell == spec.n_cells - 1
        reward = 1.0 if success else 0.0

    done = success or t >= spec.max_episode_steps
    return StepResult(nxt, observe(spec, nxt), reward, done, success)


def default_init(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform start over the legal initial-state box (the no-teacher baseline)."""
    return rng.uniform(spec.init_lower, spec.init_upper)


def goal_distance(spec: EnvSpec, state: EnvState) -> float:
    if spec.kind == "point_arena":
        return float(np.linalg.norm(state.pos - spec.goal))
    if spec.kind == "relocate_toy":
        return float(np.linalg.norm(state.ball - spec.goal))
    return float(spec.goal[0] - state.pos[0])


def with_goal(spec: EnvSpec, goal) -> EnvSpec:
    return replace(spec, goal=np.asarray(goal, dtype=np.float64))
