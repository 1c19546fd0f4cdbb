"""Routine-space off-policy reinforcement learning at desk scale."""

from .agents import (
    BaselineAgent,
    Collector,
    EvalReport,
    LossBundle,
    RoutineAgent,
    collect_and_train,
    evaluate,
    load_agent,
    make_agent,
)
from .buffer import ReplayBuffer, SequenceBatch, Transition
from .config import AgentConfig, ExperimentConfig, load_config, parse_config_text
from .envs import EnvSpec, make_env
from .errors import ConfigError, NumericalError, RoutineError, UsageError

__all__ = [
    "AgentConfig", "BaselineAgent", "Collector", "ConfigError", "EnvSpec", "EvalReport", "ExperimentConfig",
    "LossBundle", "NumericalError", "ReplayBuffer", "RoutineAgent", "RoutineError", "SequenceBatch",
    "Transition", "UsageError", "collect_and_train", "evaluate", "load_agent", "load_config", "make_agent",
    "make_env", "parse_config_text",
]
__version__ = "0.1.0"
