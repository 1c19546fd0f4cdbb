"""Shared builders for test data."""

from routine_rl.buffer import ReplayBuffer, Transition


def fill_buffer(rng, capacity=64, n=90, state_dim=6, action_dim=2, max_episode=7, terminal_prob=0.5):
    """Buffer of short episodes, some ending in a terminal, wrapped around the ring at least once."""
    buf = ReplayBuffer(capacity, state_dim, action_dim)
    ep, step = 0, 0
    ep_len = int(rng.integers(1, max_episode + 1))
    for _ in range(n):
        end = step == ep_len - 1
        terminal = bool(end and rng.random() < terminal_prob)
        buf.push(Transition(rng.standard_normal(state_dim), rng.uniform(-1, 1, action_dim),
                            rng.standard_normal(state_dim), float(rng.random()), terminal, ep, step))
        step += 1
        if end:
            ep, step = ep + 1, 0
            ep_len = int(rng.integers(1, max_episode + 1))
    return buf
