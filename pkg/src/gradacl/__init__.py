"""Teacher-student automatic curriculum learning with gradient-norm rewards."""

from .config import ExperimentConfig, load_config, parse_config, preset
from .envs import EnvSpec, make_env
from .loop import MetricsLog, ema_smooth, evaluate, run_experiment, train
from .student import SacConfig, finalize_metrics
from .teacher import TeacherConfig

__version__ = "0.1.0"

__all__ = [
    "EnvSpec", "ExperimentConfig", "MetricsLog", "SacConfig", "TeacherConfig",
    "ema_smooth", "evaluate", "finalize_metrics", "load_config", "make_env",
    "parse_config", "preset", "run_experiment", "train",
]
