"""Deterministic toy continuous-control tasks.

All tasks take actions in [-1, 1]^|a| (out-of-range inputs are clamped), give
per-step rewards in [0, 1] and truncate after ``episode_length`` steps.

``point_reach``         2-D double integrator driven towards a random goal, dense reward.
``point_reach_sparse``  same dynamics, reward only inside a small goal radius.
``pendulum_swingup``    torque-limited pendulum, reward for being upright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError

DT = 0.05
EPISODE_LENGTH = 200


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    episode_length: int = EPISODE_LENGTH
    action_low: float = -1.0
    action_high: float = 1.0
    reward_range: tuple[float, float] = (0.0, 1.0)

    @property
    def action_bounds(self) -> list[tuple[float, float]]:
        return [(self.action_low, self.action_high)] * self.action_dim


@dataclass
class StepResult:
    next_state: np.ndarray
    reward: float
    terminal: bool
    diagnostic: float


class Env:
    """Base class: subclasses implement ``_initial``, ``_advance``, ``_reward``, ``_speed``."""

    spec_: EnvSpec

    def __init__(self, episode_length: int = EPISODE_LENGTH):
        self.episode_length = episode_length
        self.state: np.ndarray | None = None
        self.t = 0
        self.done = True

    def spec(self) -> EnvSpec:
        s = self.spec_
        return EnvSpec(s.name, s.state_dim, s.action_dim, self.episode_length)

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        self.state = self._initial(rng)
        self.t = 0
        self.done = False
        return self.state.copy()

    def step(self, action) -> StepResult:
        if self.done:
            raise UsageError(f"{self.spec_.name}: step() after terminal; call reset()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(self.spec_.action_dim), -1.0, 1.0)
        self.state = self._advance(self.state, a)
        self.t += 1
        reward = float(np.clip(self._reward(self.state), 0.0, 1.0))
        self.done = self.t >= self.episode_length
        return StepResult(self.state.copy(), reward, self.done, self.diagnostic_feature(self.state))

    def diagnostic_feature(self, state) -> float:
        """Speed of the controlled body; the coverage feature for exploration histograms."""
        return float(self._speed(np.asarray(state, dtype=np.float64)))


class PointReach(Env):
    """Double integrator on [-1, 1]^2.  State: (position 2, velocity 2, goal 2)."""

    spec_ = EnvSpec("point_reach", state_dim=6, action_dim=2)
    accel = 2.0
    damping = 0.5
    max_speed = 2.0
    reward_scale = 2.0  # distance at which the dense reward reaches zero

    def _initial(self, rng):
        pos = rng.uniform(-0.9, 0.9, size=2)
        goal = rng.uniform(-0.8, 0.8, size=2)
        return np.concatenate([pos, np.zeros(2), goal])

    def _advance(self, state, a):
        pos, vel, goal = state[0:2], state[2:4], state[4:6]
        vel = np.clip(vel * (1.0 - self.damping * DT) + self.accel * a * DT, -self.max_speed, self.max_speed)
        pos = pos + vel * DT
        hit = np.abs(pos) > 1.0
        pos = np.clip(pos, -1.0, 1.0)
        vel = np.where(hit, 0.0, vel)
        return np.concatenate([pos, vel, goal])

    def _distance(self, state):
        return float(np.linalg.norm(state[0:2] - state[4:6]))

    def _reward(self, state):
        return max(0.0, 1.0 - self._distance(state) / self.reward_scale)

    def _speed(self, state):
        return np.linalg.norm(state[2:4])


class PointReachSparse(PointReach):
    spec_ = EnvSpec("point_reach_sparse", state_dim=6, action_dim=2)
    goal_radius = 0.05

    def _reward(self, state):
        return 1.0 if self._distance(state) <= self.goal_radius else 0.0


class PendulumSwingup(Env):
    """Pendulum with angle measured from upright.  State: (cos angle, sin angle, angular velocity)."""

    spec_ = EnvSpec("pendulum_swingup", state_dim=3, action_dim=1)
    gravity = 10.0
    max_torque = 2.0
    max_speed = 8.0
    damping = 0.1

    def __init__(self, episode_length: int = EPISODE_LENGTH):
        super().__init__(episode_length)
        self.angle = 0.0
        self.velocity = 0.0

    def _initial(self, rng):
        self.angle = rng.uniform(-np.pi, np.pi)
        self.velocity = rng.uniform(-1.0, 1.0)
        return self._observe()

    def _observe(self):
        return np.array([np.cos(self.angle), np.sin(self.angle), self.velocity])

    def _advance(self, state, a):
        acc = self.gravity * np.sin(self.angle) + self.max_torque * a[0] - self.damping * self.velocity
        self.velocity = float(np.clip(self.velocity + acc * DT, -self.max_speed, self.max_speed))
        self.angle = float((self.angle + self.velocity * DT + np.pi) % (2 * np.pi) - np.pi)
        return self._observe()

    def _reward(self, state):
        return (1.0 + state[0]) / 2.0

    def _speed(self, state):
        return abs(state[2])


ENVIRONMENTS = {
    "point_reach": PointReach,
    "point_reach_sparse": PointReachSparse,
    "pendulum_swingup": PendulumSwingup,
}


def make_env(env_id: str, episode_length: int = EPISODE_LENGTH) -> Env:
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise ConfigError(f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls(episode_length)
