"""Circular transition store with L-step sequence sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    s_next: np.ndarray
    r: float
    terminal: bool
    episode_id: int
    step_index: int


@dataclass
class SequenceBatch:
    """N windows of up to L consecutive transitions from one episode each.

    ``valid[i, j]`` marks sub-steps that exist in the same episode; ``cont[i, j]``
    is 1 when the episode continues after sub-step j.  Invalid slots hold zero
    reward, zero action and the last valid next state.
    """

    s: np.ndarray       # (N, |s|)
    a: np.ndarray       # (N, L, |a|)
    s_next: np.ndarray  # (N, L, |s|)
    r: np.ndarray       # (N, L)
    cont: np.ndarray    # (N, L)
    valid: np.ndarray   # (N, L)

    @property
    def size(self) -> int:
        return len(self.s)

    @property
    def L(self) -> int:
        return self.r.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return self.valid.sum(axis=1).astype(int)


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int, action_dim: int, min_data: int = 1):
        if capacity < 1:
            raise UsageError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.min_data = max(1, min_data)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.s_next = np.zeros((capacity, state_dim))
        self.r = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.episode_id = np.full(capacity, -1, dtype=np.int64)
        self.step_index = np.zeros(capacity, dtype=np.int64)
        self.ptr = 0
        self.count = 0

    def __len__(self) -> int:
        return self.count

    def push(self, t: Transition) -> None:
        i = self.ptr
        self.s[i] = t.s
        self.a[i] = t.a
        self.s_next[i] = t.s_next
        self.r[i] = t.r
        self.terminal[i] = t.terminal
        self.episode_id[i] = t.episode_id
        self.step_index[i] = t.step_index
        self.ptr = (i + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)

    def _oldest(self) -> int:
        return (self.ptr - self.count) % self.capacity

    def window_indices(self, starts: np.ndarray, L: int) -> tuple[np.ndarray, np.ndarray]:
        """Storage indices of the L-step windows at ``starts`` and their validity masks."""
        offsets = np.arange(L)
        idx = (starts[:, None] + offsets[None, :]) % self.capacity
        age = (starts - self._oldest()) % self.capacity
        stored = (age[:, None] + offsets[None, :]) < self.count
        same = (self.episode_id[idx] == self.episode_id[starts][:, None]) \
            & (self.step_index[idx] == self.step_index[starts][:, None] + offsets[None, :])
        valid = stored & same
        # a terminal sub-step ends the window
        ended = np.cumsum(self.terminal[idx] & valid, axis=1) - (self.terminal[idx] & valid)
        valid &= ended == 0
        valid = np.cumprod(valid, axis=1).astype(bool)
        return idx, valid

    def sample_batch(self, N: int, L: int, rng: np.random.Generator) -> SequenceBatch:
        if self.count < self.min_data:
            raise UsageError(f"buffer holds {self.count} transitions, need at least {self.min_data}")
        starts = (self._oldest() + rng.integers(0, self.count, size=N)) % self.capacity
        return self.batch_from_starts(starts, L)

    def batch_from_starts(self, starts, L: int) -> SequenceBatch:
        starts = np.asarray(starts, dtype=np.int64)
        idx, valid = self.window_indices(starts, L)
        vf = valid.astype(np.float64)
        last = valid.sum(axis=1) - 1
        last_idx = idx[np.arange(len(starts)), last]
        s_next = np.where(valid[:, :, None], self.s_next[idx], self.s_next[last_idx][:, None, :])
        return SequenceBatch(
            s=self.s[starts].copy(),
            a=np.where(valid[:, :, None], self.a[idx], 0.0),
            s_next=s_next,
            r=np.where(valid, self.r[idx], 0.0),
            cont=vf * (1.0 - self.terminal[idx]),
            valid=vf,
        )
