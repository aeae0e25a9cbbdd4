"""Teacher-student training loop, evaluation, and the metrics table.

One outer iteration: the teacher assigns ``k`` start states in turn, the
student trains through one episode from each, and the teacher then takes a
REINFORCE update on the ``k`` (observation, assignment, learning-progress)
samples. Without a teacher, starts come from the environment's uniform
default distribution.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import time
from dataclasses import dataclass

import numpy as np

from . import envs
from .config import ExperimentConfig, format_config
from .errors import PhaseError
from .student import ReplayBuffer, finalize_metrics, make_sac_nets, run_assigned_episode, sample_action
from .teacher import History, TeacherSample, assign_task, make_teacher, reinforce_update

log = logging.getLogger(__name__)

COLUMNS = (
    "env_step", "episode", "train_return", "eval_return", "metric1",
    "metric2", "teacher_reward", "goal_distance", "wall_time",
)


class MetricsLog:
    """Append-only table of run scalars; ``None`` marks a missing value.

    Episode rows carry the training columns; evaluation rows carry only
    ``env_step`` and ``eval_return``.
    """

    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def append(self, **values):
        unknown = set(values) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown metrics columns {sorted(unknown)}")
        row = {c: values.get(c) for c in COLUMNS}
        if self.rows and row["env_step"] < self.rows[-1]["env_step"]:
            raise ValueError("env_step must be non-decreasing")
        for c, v in row.items():
            if v is not None and not math.isfinite(v):
                raise ValueError(f"non-finite value in column {c}")
        self.rows.append(row)

    def column(self, name):
        return [r[name] for r in self.rows]

    def episode_rows(self):
        return [r for r in self.rows if r["episode"] is not None]

    def eval_series(self):
        pts = [(r["env_step"], r["eval_return"]) for r in self.rows if r["eval_return"] is not None]
        return [p[0] for p in pts], [p[1] for p in pts]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    def to_csv_text(self):
        lines = [",".join(COLUMNS)]
        for r in self.rows:
            lines.append(",".join(_cell(r[c]) for c in COLUMNS))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise ValueError(f"{path}: header does not match the metrics schema")
            rows = []
            for rec in reader:
                if len(rec) != len(COLUMNS):
                    raise ValueError(f"{path}: row with {len(rec)} fields")
                rows.append({c: _parse_cell(c, v) for c, v in zip(COLUMNS, rec)})
        return cls(rows)


def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _parse_cell(column, text):
    if text == "":
        return None
    return int(text) if column in ("env_step", "episode") else float(text)


def ema_smooth(series, lam):
    """Exponential moving average ``s_i = lam * s_{i-1} + (1 - lam) * y_i``, seeded with ``s_1 = y_1``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    out = []
    for i, y in enumerate(series):
        out.append(float(y) if i == 0 else lam * out[-1] + (1.0 - lam) * float(y))
    return out


@dataclass
class EvalEpisode:
    episode_return: float
    final_goal_distance: float
    success: bool


def evaluate_episodes(nets, spec, n_episodes, seed):
    """Deterministic-policy episodes from default starts drawn with ``seed``."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    results = []
    for _ in range(n_episodes):
        state, obs = envs.reset(spec, envs.default_init(spec, rng))
        total = 0.0
        success = False
        for _ in range(spec.max_episode_steps):
            res = envs.step(spec, state, sample_action(nets, obs, deterministic=True))
            total += res.reward
            state, obs = res.next_state, res.observation
            if res.done:
                success = res.success
                break
        results.append(EvalEpisode(total, envs.goal_distance(spec, state), success))
    return results


def evaluate(nets, spec, n_episodes, seed) -> float:
    """Mean undiscounted return of the deterministic policy; touches nothing."""
    return float(np.mean([e.episode_return for e in evaluate_episodes(nets, spec, n_episodes, seed)]))


@dataclass
class RunResult:
    log: MetricsLog
    nets: object
    teacher: object
    buffer: ReplayBuffer
    n_teacher_updates: int
    env_steps: int


def _streams(seed):
    init, student, teacher, env, ev = np.random.SeedSequence(seed).spawn(5)
    return {
        "init": init,
        "student": np.random.default_rng(student),
        "teacher_init": teacher.spawn(1)[0],
        "teacher": np.random.default_rng(teacher),
        "env": np.random.default_rng(env),
        "eval_seed": int(ev.generate_state(1)[0]),
    }


def _phase(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PhaseError:
        raise
    except Exception as exc:
        raise PhaseError(name, exc) from exc


def train(config: ExperimentConfig, on_episode=None) -> RunResult:
    """Run one experiment and return the log together with the final learners.

    ``on_episode`` (optional) is called after every student episode with a dict
    of diagnostics (buffer size before/after, outcome, ...).
    """
    spec = config.make_env()
    sac = config.sac
    s = _streams(config.seed)
    nets = make_sac_nets(spec.obs_dim, spec.action_dim, sac, s["init"])
    buffer = ReplayBuffer(sac.buffer_capacity, spec.obs_dim, spec.action_dim)
    use_teacher = config.condition != "no_teacher"
    tcfg = config.teacher
    policy = make_teacher(spec.init_dim, tcfg, s["teacher_init"]) if use_teacher else None
    history = History(spec) if use_teacher else None

    mlog = MetricsLog()
    t0 = time.perf_counter()
    wall = (lambda: time.perf_counter() - t0) if config.record_wall_time else (lambda: None)

    def run_eval(step):
        value = _phase("evaluation", evaluate, nets, spec, config.eval_episodes, s["eval_seed"])
        mlog.append(env_step=step, eval_return=value, wall_time=wall())

    used = 0
    episode = 0
    n_updates = 0
    next_eval = config.eval_every
    run_eval(0)
    batch = []
    while used < config.total_env_steps:
        if use_teacher:
            obs = history.observation()
            rho0, raw = _phase("teacher assignment", assign_task, policy, obs, spec, s["teacher"])
        else:
            rho0 = envs.default_init(spec, s["env"])
        size_before = len(buffer)
        out = _phase(
            "student episode", run_assigned_episode, nets, buffer, spec, rho0, sac, s["student"],
            max_steps=config.total_env_steps - used,
        )
        nets, buffer = out.nets, out.buffer
        used += out.steps
        m1, m2 = finalize_metrics(out.record)
        reward = None
        if use_teacher:
            reward = m1 if tcfg.reward_metric == "metric1" else m2
            batch.append(TeacherSample(obs, raw, np.asarray(rho0), out.episode_return, reward))
            history.update(rho0, out.episode_return)
        mlog.append(
            env_step=used, episode=episode, train_return=out.episode_return, metric1=m1, metric2=m2,
            teacher_reward=reward, goal_distance=envs.goal_distance(spec, out.start_state), wall_time=wall(),
        )
        if on_episode is not None:
            on_episode({
                "episode": episode, "env_step": used, "buffer_before": size_before,
                "buffer_after": len(buffer), "buffer_clears": buffer.n_clears, "outcome": out,
                "rho0": np.asarray(rho0),
            })
        episode += 1
        if use_teacher and len(batch) == tcfg.k:
            policy = _phase("teacher update", reinforce_update, policy, batch, tcfg)
            n_updates += 1
            batch = []
        if used >= next_eval:
            run_eval(used)
            while next_eval <= used:
                next_eval += config.eval_every
    last_step, _ = mlog.eval_series()
    if last_step[-1] != used:
        run_eval(used)
    log.info("finished %s seed=%d: %d steps, %d episodes, %d teacher updates",
             config.condition, config.seed, used, episode, n_updates)
    return RunResult(mlog, nets, policy, buffer, n_updates, used)


def run_experiment(config: ExperimentConfig, on_episode=None) -> MetricsLog:
    result = train(config, on_episode)
    if config.out_dir:
        write_outputs(config, result.log, config.out_dir)
    return result.log


def write_outputs(config, mlog: MetricsLog, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    mlog.to_csv(os.path.join(out_dir, "metrics.csv"))
    with open(os.path.join(out_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(format_config(config))


def steps_to_threshold(steps, values, threshold):
    """First env step at which ``values`` reaches ``threshold``; None if never."""
    for s, v in zip(steps, values):
        if v >= threshold:
            return s
    return None
