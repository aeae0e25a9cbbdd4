"""Experiment configuration and its flat ``key = value`` file format.

Example::

    # desk-scale point arena, no teacher
    condition = no_teacher
    total_env_steps = 50000
    env.kind = point_arena
    sac.batch_size = 128
    teacher.k = 8

Top-level keys configure the experiment, ``env.*`` the environment
constants, ``sac.*`` the student and ``teacher.*`` the teacher.
"""
from __future__ import annotations

import dataclasses
import inspect
from dataclasses import dataclass, field, fields, replace

from . import envs
from .errors import ConfigError
from .student import SacConfig
from .teacher import TeacherConfig

CONDITIONS = ("no_teacher", "teacher_metric1", "teacher_metric2")


@dataclass(frozen=True)
class ExperimentConfig:
    env_kind: str = "point_arena"
    env: dict = field(default_factory=dict)  # overrides of the environment factory's constants
    sac: SacConfig = field(default_factory=SacConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    condition: str = "no_teacher"
    total_env_steps: int = 50_000  # the full-scale setting trains for 1,000,000
    eval_every: int = 2_000
    eval_episodes: int = 10
    seed: int = 0
    smoothing_lambda: float = 0.9
    out_dir: str | None = None
    record_wall_time: bool = False  # wall time breaks byte-identical reruns

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ConfigError(f"condition must be one of {CONDITIONS}", key="condition")
        if self.total_env_steps < 1:
            raise ConfigError("total_env_steps must be >= 1", key="total_env_steps")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1", key="eval_every")
        if self.eval_episodes < 1:
            raise ConfigError("eval_episodes must be >= 1", key="eval_episodes")
        if not 0.0 <= self.smoothing_lambda < 1.0:
            raise ConfigError("smoothing_lambda must lie in [0, 1)", key="smoothing_lambda")
        if self.condition != "no_teacher":
            metric = self.condition.split("_")[1]
            if self.teacher.reward_metric != metric:
                object.__setattr__(self, "teacher", replace(self.teacher, reward_metric=metric))
        # store every environment constant, so configs that resolve alike compare equal
        resolved = {**_env_keys(self.env_kind), **self.env}
        if resolved.get("goal") is not None:
            resolved["goal"] = tuple(float(g) for g in resolved["goal"])
        object.__setattr__(self, "env", resolved)
        self.make_env()

    def make_env(self):
        return envs.make_env(self.env_kind, **self.env)


def _env_keys(kind):
    try:
        factory = envs._FACTORIES[kind]
    except KeyError:
        raise ConfigError(f"unknown environment kind {kind!r}", key="env.kind") from None
    return {name: p.default for name, p in inspect.signature(factory).parameters.items()}


_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _coerce(text, example, key, line):
    try:
        if isinstance(example, bool):
            return _BOOL[text.lower()]
        if isinstance(example, int):
            return int(text.replace("_", ""))
        if isinstance(example, float):
            return float(text)
        if isinstance(example, tuple):
            return tuple(float(x) for x in text.split(","))
    except (KeyError, ValueError):
        kind = "boolean" if isinstance(example, bool) else type(example).__name__
        raise ConfigError(f"cannot parse {text!r} as {kind}", key=key, line=line) from None
    if text.lower() in ("none", ""):
        return None
    return text


def _field_defaults(cls):
    return {f.name: f.default for f in fields(cls) if f.default is not dataclasses.MISSING}


def parse_config(text, source="<config>") -> ExperimentConfig:
    """Parse the flat config format; unknown keys and bad values raise ConfigError."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value' in {source}", line=lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if not key:
            raise ConfigError("empty key", line=lineno)
        if key in raw:
            raise ConfigError("duplicate key", key=key, line=lineno)
        raw[key] = (value, lineno)
    return _build(raw)


def _build(raw):
    top = _field_defaults(ExperimentConfig)
    top.pop("env_kind")
    top["out_dir"] = ""
    sac_defaults = _field_defaults(SacConfig)
    teacher_defaults = _field_defaults(TeacherConfig)
    kind = raw.pop("env.kind", ("point_arena", 0))[0]
    env_defaults = _env_keys(kind)

    values = {}
    sac, teacher, env = {}, {}, {}
    for key, (text, line) in raw.items():
        section, _, name = key.partition(".")
        if name and section == "sac" and name in sac_defaults:
            sac[name] = _coerce(text, sac_defaults[name], key, line)
        elif name and section == "teacher" and name in teacher_defaults:
            teacher[name] = _coerce(text, teacher_defaults[name], key, line)
        elif name and section == "env" and name in env_defaults:
            env[name] = _coerce(text, env_defaults[name], key, line)
        elif not name and key in top:
            values[key] = _coerce(text, top[key], key, line)
        else:
            raise ConfigError("unknown key", key=key, line=line)

    def build(cls, kwargs, prefix):
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            name = exc.key if exc.key and "." in exc.key else f"{prefix}.{exc.key}"
            line = raw.get(name, (None, None))[1]
            raise ConfigError(exc.reason, key=name, line=line) from None

    values["sac"] = build(SacConfig, sac, "sac")
    values["teacher"] = build(TeacherConfig, teacher, "teacher")
    try:
        return ExperimentConfig(env_kind=kind, env=env, **values)
    except ConfigError as exc:
        line = raw.get(exc.key, (None, None))[1] if exc.key else None
        raise ConfigError(exc.reason, key=exc.key, line=line) from None


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path))


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if value is None:
        return "none"
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    """Canonical, fully-resolved echo of every key (parseable by parse_config)."""
    lines = []
    for f in fields(ExperimentConfig):
        if f.name in ("env", "sac", "teacher", "env_kind"):
            continue
        value = getattr(config, f.name)
        lines.append(f"{f.name} = {_fmt('' if value is None else value)}")
    lines.append(f"env.kind = {config.env_kind}")
    for name, default in _env_keys(config.env_kind).items():
        lines.append(f"env.{name} = {_fmt(config.env.get(name, default))}")
    for prefix, obj in (("sac", config.sac), ("teacher", config.teacher)):
        for f in fields(obj):
            lines.append(f"{prefix}.{f.name} = {_fmt(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


# Small networks and a larger learning rate keep a 50k-step run to a couple of
# minutes on one CPU core. A short run also gives the teacher only a couple of
# dozen updates, so it takes larger steps. Full-scale values stay the
# dataclass defaults.
DESK_OVERRIDES = {
    "sac.hidden_size": "64",
    "sac.batch_size": "128",
    "sac.actor_lr": "0.001",
    "sac.critic_lr": "0.001",
    "teacher.lr": "0.01",
}

PRESETS = {
    "desk-point": {"env.kind": "point_arena", **DESK_OVERRIDES},
    "desk-relocate": {"env.kind": "relocate_toy", **DESK_OVERRIDES, "eval_every": "2500"},
    "full-scale": {"env.kind": "relocate_toy", "total_env_steps": "1000000", "eval_every": "10000"},
}


def preset(name, **overrides) -> ExperimentConfig:
    """Named configuration; keyword overrides use the file's dotted keys with '__' for '.'."""
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    for key, value in overrides.items():
        base[key.replace("__", ".")] = _fmt(value)
    text = "\n".join(f"{k} = {v}" for k, v in base.items())
    return parse_config(text, source=f"preset {name}")


def preset_text(name) -> str:
    return format_config(preset(name))
