"""Agent and experiment configuration, plus the flat ``key = value`` config format.

Config files hold one assignment per line; agent fields use an ``agent.``
prefix and ``#`` starts a comment::

    env = point_reach
    seeds = 0, 1, 2
    epochs = 15
    agent.algorithm = routine_td3
    agent.L = 4
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .envs import ENVIRONMENTS
from .errors import ConfigError

ALGORITHMS = ("routine_td3", "routine_sac", "td3", "sac")


@dataclass
class AgentConfig:
    algorithm: str = "routine_td3"
    L: int = 4
    gamma: float = 0.99
    rho: float = 0.995
    lr: float = 0.001
    beta1: float = 0.9
    batch_size: int = 128
    buffer_size: int = 50_000
    min_data: int = 1000
    policy_delay: int = 2
    hidden_dim: int = 64
    hidden_layers: int = 2
    activation: str = "relu"
    # routine TD3
    routine_noise: float = 0.2
    action_noise: float = 0.1
    target_smoothing: float = 0.1
    smoothing_clip: float = 0.25
    # baseline TD3 target policy smoothing
    td3_target_noise: float = 0.2
    td3_noise_clip: float = 0.5
    # SAC temperature
    alpha_init: float = 0.1
    alpha_lr: float = 0.0001
    alpha_beta1: float = 0.5
    j_mto_coeff: float = 1.0
    j_lc_coeff: float = 1.0
    # ablations
    replan_mode: bool = False
    disable_routine_noise: bool = False
    disable_action_noise: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def is_routine(self) -> bool:
        return self.algorithm.startswith("routine_")

    @property
    def is_sac(self) -> bool:
        return self.algorithm.endswith("sac")

    @property
    def effective_L(self) -> int:
        return self.L if self.is_routine else 1

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"agent.algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.L < 1:
            raise ConfigError(f"agent.L must be >= 1, got {self.L}")
        if self.policy_delay < 1:
            raise ConfigError(f"agent.policy_delay must be >= 1, got {self.policy_delay}")
        for name in ("lr", "alpha_lr", "alpha_init", "batch_size", "buffer_size", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"agent.{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"agent.gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"agent.rho must lie in [0, 1], got {self.rho}")

    @classmethod
    def full_scale_profile(cls, **overrides) -> "AgentConfig":
        """Network and buffer sizes of the original full-scale experiments."""
        base = dict(hidden_dim=256, buffer_size=100_000, batch_size=256)
        base.update(overrides)
        return cls(**base)


@dataclass
class ExperimentConfig:
    env: str = "point_reach"
    agent: AgentConfig = field(default_factory=AgentConfig)
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs: int = 15
    steps_per_epoch: int = 2000
    eval_episodes: int = 5
    output: str = "runs/default"

    def __post_init__(self):
        if self.env not in ENVIRONMENTS:
            raise ConfigError(f"env must be one of {sorted(ENVIRONMENTS)}, got {self.env!r}")
        if self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("epochs and steps_per_epoch must be positive")
        if self.eval_episodes < 1:
            raise ConfigError(f"eval_episodes must be >= 1, got {self.eval_episodes}")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")

    @property
    def total_env_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def with_agent(self, **changes) -> "ExperimentConfig":
        return replace(self, agent=replace(self.agent, **changes))


def _coerce(raw: str, typ, key: str, lineno: int):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        if typ == "list[int]":
            return [int(x) for x in raw.replace(",", " ").split()]
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: key {key!r}: cannot parse {raw!r} as {typ}") from None


def parse_seed_list(raw: str) -> list[int]:
    return _coerce(raw, "list[int]", "seeds", 0)


def parse_config_text(text: str) -> ExperimentConfig:
    agent_types = {f.name: f.type for f in fields(AgentConfig)}
    top_types = {"env": "str", "seeds": "list[int]", "epochs": "int", "steps_per_epoch": "int",
                 "eval_episodes": "int", "output": "str"}
    top: dict = {}
    agent: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("agent."):
            name = key[len("agent."):]
            if name not in agent_types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            agent[name] = _coerce(value, agent_types[name], key, lineno)
        elif key in top_types:
            top[key] = _coerce(value, top_types[key], key, lineno)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    seed_env = os.environ.get("ROUTINE_SEED")
    if seed_env:
        top["seeds"] = parse_seed_list(seed_env)
    return ExperimentConfig(agent=AgentConfig(**agent), **top)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = [f"env = {cfg.env}", f"seeds = {', '.join(map(str, cfg.seeds))}",
             f"epochs = {cfg.epochs}", f"steps_per_epoch = {cfg.steps_per_epoch}",
             f"eval_episodes = {cfg.eval_episodes}", f"output = {cfg.output}"]
    for f in fields(AgentConfig):
        lines.append(f"agent.{f.name} = {getattr(cfg.agent, f.name)}")
    return "\n".join(lines) + "\n"
