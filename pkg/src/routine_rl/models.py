"""Policy, critic, routine decoder and routine encoder networks.

Dimensionality rules for a task with |a| action dimensions and maximum
routine length L:

    routine dim    |n| = L * |a|
    embedding dim  |h| = 2 ** ceil(log2 |a|)
    aggregate dim  |g| = L * |h|

Every network owns a :class:`ParameterSet`; ``forward(..., frozen=True)`` lets
gradients flow through a network to its inputs without reaching its weights.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, UsageError
from .params import ParameterSet

STD_FLOOR = 1e-4
LOG_2PI = math.log(2.0 * math.pi)

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class RoutineSpaceSpec:
    L: int
    action_dim: int

    def __post_init__(self):
        if self.L < 1 or self.action_dim < 1:
            raise ConfigError(f"routine space needs L >= 1 and |a| >= 1, got L={self.L}, |a|={self.action_dim}")

    @property
    def routine_dim(self) -> int:
        return self.L * self.action_dim

    @property
    def hidden_dim(self) -> int:
        return 1 << (self.action_dim - 1).bit_length()

    @property
    def aggregate_dim(self) -> int:
        return self.L * self.hidden_dim


@dataclass
class ActionSequence:
    actions: np.ndarray  # (l, |a|)

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class DecoderOutput:
    """Batched decoder output: per-slot actions (or Gaussian means/stds) and termination logits."""

    actions: Tensor                 # (N, L, |a|) tanh outputs; the means for the Gaussian variant
    term_logits: Tensor             # (N, L-1)
    stds: Tensor | None = None      # (N, L, |a|), Gaussian variant only

    @property
    def term_probs(self) -> np.ndarray:
        return ad._sigmoid(self.term_logits.data)

    @property
    def gaussian(self) -> bool:
        return self.stds is not None


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _linear_params(rng, prefix: str, fan_in: int, fan_out: int) -> dict[str, np.ndarray]:
    return {f"{prefix}.W": uniform_init(rng, fan_in, (fan_in, fan_out)),
            f"{prefix}.b": uniform_init(rng, fan_in, (fan_out,))}


class MLP:
    """Fully connected network with ``len(hidden)`` hidden layers."""

    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, rng: np.random.Generator,
                 activation: str = "relu", output: str | None = None):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.output = output
        dims = [in_dim, *hidden, out_dim]
        arrays: dict[str, np.ndarray] = {}
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            arrays.update(_linear_params(rng, f"l{i}", a, b))
        self.n_layers = len(dims) - 1
        self.params = ParameterSet(arrays)

    def forward(self, x, frozen: bool = False) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ConfigError(f"MLP expects input (N, {self.in_dim}), got {x.shape}")
        act = ACTIVATIONS[self.activation]
        p = self.params
        for i in range(self.n_layers):
            x = ad.linear(x, p.get(f"l{i}.W", frozen), p.get(f"l{i}.b", frozen))
            if i < self.n_layers - 1:
                x = act(x)
        if self.output == "tanh":
            x = ad.tanh(x)
        return x

    __call__ = forward


class Policy(MLP):
    """Deterministic state -> routine map, bounded to [-1, 1]^|n|."""

    def __init__(self, state_dim: int, routine_dim: int, hidden: int, rng, activation="relu", layers=2):
        super().__init__(state_dim, [hidden] * layers, routine_dim, rng, activation, output="tanh")


class QNetwork(MLP):
    """Q(s, n) -> scalar, on the concatenated input."""

    def __init__(self, state_dim: int, routine_dim: int, hidden: int, rng, activation="relu", layers=2):
        super().__init__(state_dim + routine_dim, [hidden] * layers, 1, rng, activation)
        self.state_dim = state_dim

    def value(self, s, n, frozen: bool = False) -> Tensor:
        """Q values as an (N,) tensor."""
        x = ad.concat([ad.as_tensor(s), ad.as_tensor(n)], axis=1)
        q = self.forward(x, frozen)
        return ad.reshape(q, (q.shape[0],))


class RoutineDecoder:
    """Two-layer decoder: routine -> L slots of (action[, std], termination logit).

    Layer 1 produces L sub-representations of size |h|; layer 2 (weights shared
    across slots) maps each one to its action and termination logit.
    """

    def __init__(self, space: RoutineSpaceSpec, rng: np.random.Generator, gaussian: bool = False):
        self.space = space
        self.gaussian = gaussian
        a, h = space.action_dim, space.hidden_dim
        self.slot_out = (2 * a if gaussian else a) + 1
        arrays = _linear_params(rng, "l0", space.routine_dim, space.L * h)
        arrays.update(_linear_params(rng, "l1", h, self.slot_out))
        self.params = ParameterSet(arrays)

    def forward(self, n, frozen: bool = False) -> DecoderOutput:
        n = ad.as_tensor(n)
        sp = self.space
        if n.ndim != 2 or n.shape[1] != sp.routine_dim:
            raise ConfigError(f"decoder expects routines (N, {sp.routine_dim}), got {n.shape}")
        N, L, a = n.shape[0], sp.L, sp.action_dim
        p = self.params
        z = ad.tanh(ad.linear(n, p.get("l0.W", frozen), p.get("l0.b", frozen)))
        z = ad.reshape(z, (N * L, sp.hidden_dim))
        out = ad.reshape(ad.linear(z, p.get("l1.W", frozen), p.get("l1.b", frozen)), (N, L, self.slot_out))
        actions = ad.tanh(out[:, :, :a])
        logits = out[:, : L - 1, self.slot_out - 1]
        stds = ad.softplus(out[:, :, a: 2 * a]) + STD_FLOOR if self.gaussian else None
        return DecoderOutput(actions, logits, stds)

    __call__ = forward


class RoutineEncoder:
    """Three-layer encoder: action sequence (length <= L) -> routine.

    Layer 1 embeds every action to |h|; layer 2 maps the embedding at position
    j through position-specific weights to |g| and sums over positions; layer 3
    maps the aggregate to the routine.  A running sum over positions yields the
    routines of all prefixes in one pass.
    """

    def __init__(self, space: RoutineSpaceSpec, rng: np.random.Generator):
        self.space = space
        a, h, g, L = space.action_dim, space.hidden_dim, space.aggregate_dim, space.L
        arrays = _linear_params(rng, "l0", a, h)
        arrays["l1.W"] = uniform_init(rng, h, (L, h, g))
        arrays["l1.b"] = uniform_init(rng, h, (g,))
        arrays.update(_linear_params(rng, "l2", g, space.routine_dim))
        self.params = ParameterSet(arrays)

    def _position_terms(self, actions, frozen: bool) -> Tensor:
        actions = ad.as_tensor(actions)
        sp = self.space
        if actions.ndim != 3 or actions.shape[1:] != (sp.L, sp.action_dim):
            raise ConfigError(f"encoder expects actions (N, {sp.L}, {sp.action_dim}), got {actions.shape}")
        N = actions.shape[0]
        p = self.params
        flat = ad.reshape(actions, (N * sp.L, sp.action_dim))
        h = ad.tanh(ad.linear(flat, p.get("l0.W", frozen), p.get("l0.b", frozen)))
        h = ad.reshape(h, (N, sp.L, sp.hidden_dim))
        return ad.einsum("nlh,lhg->nlg", h, p.get("l1.W", frozen))

    def _head(self, aggregate: Tensor, frozen: bool) -> Tensor:
        p = self.params
        g = ad.tanh(aggregate + p.get("l1.b", frozen))
        return ad.tanh(ad.linear(g, p.get("l2.W", frozen), p.get("l2.b", frozen)))

    def forward(self, actions, lengths, frozen: bool = False) -> Tensor:
        """Routines for ``actions[i, :lengths[i]]``; positions past each length are ignored."""
        sp = self.space
        lengths = np.asarray(lengths)
        if np.any(lengths < 1) or np.any(lengths > sp.L):
            raise UsageError(f"sequence lengths must lie in [1, {sp.L}], got {lengths}")
        terms = self._position_terms(actions, frozen)
        keep = (np.arange(sp.L)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]
        return self._head(ad.tsum(terms * keep, axis=1), frozen)

    __call__ = forward

    def all_prefixes(self, actions, frozen: bool = False) -> Tensor:
        """Routines of a_{1:1}, ..., a_{1:L} for each row: (N, L, |n|)."""
        sp = self.space
        terms = self._position_terms(actions, frozen)
        N = terms.shape[0]
        running = ad.reshape(ad.cumsum(terms, axis=1), (N * sp.L, sp.aggregate_dim))
        return ad.reshape(self._head(running, frozen), (N, sp.L, sp.routine_dim))

    def encode(self, seq: ActionSequence) -> np.ndarray:
        """Routine of a single action sequence."""
        l = seq.length
        if l < 1 or l > self.space.L:
            raise UsageError(f"sequence length must lie in [1, {self.space.L}], got {l}")
        padded = np.zeros((1, self.space.L, self.space.action_dim))
        padded[0, :l] = seq.actions
        return self.forward(padded, np.array([l])).data[0]


# ---------------------------------------------------------------------------
# routine lengths and sequence likelihoods

def length_probabilities(e) -> np.ndarray:
    """p(l) for l = 1..L given termination probabilities e_1..e_{L-1}."""
    e = np.asarray(e, dtype=np.float64)
    survive = np.concatenate([[1.0], np.cumprod(1.0 - e)])
    return survive * np.concatenate([e, [1.0]])


def lengths_from_uniforms(term_probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Sequential coin flips: the length is the first j with u_j < e_j, else L."""
    term_probs = np.atleast_2d(term_probs)
    N, Lm1 = term_probs.shape
    stop = np.asarray(uniforms).reshape(N, Lm1) < term_probs
    stop = np.concatenate([stop, np.ones((N, 1), dtype=bool)], axis=1)
    return np.argmax(stop, axis=1) + 1


def sample_length(e, rng: np.random.Generator) -> int:
    e = np.asarray(e, dtype=np.float64)
    return int(lengths_from_uniforms(e[None, :], rng.random((1, e.size)))[0])


def deterministic_lengths(term_probs: np.ndarray) -> np.ndarray:
    """First slot with e_j > 0.5, else L."""
    term_probs = np.atleast_2d(term_probs)
    stop = np.concatenate([term_probs > 0.5, np.ones((len(term_probs), 1), dtype=bool)], axis=1)
    return np.argmax(stop, axis=1) + 1


def prefix_mask(lengths, L: int) -> np.ndarray:
    return np.arange(L)[None, :] < np.asarray(lengths)[:, None]


def decode_sample(out: DecoderOutput, rng: np.random.Generator | None = None,
                  mode: str = "stochastic", row: int = 0) -> ActionSequence:
    """Turn one row of decoder output into an executable action sequence.

    Stochastic mode samples the length by coin flips and, for a Gaussian
    decoder, each action from N(mean, std^2) clamped to [-1, 1].  Deterministic
    mode uses the threshold length rule and the mean actions.
    """
    e = out.term_probs[row]
    mu = out.actions.data[row]
    if mode == "deterministic":
        l = int(deterministic_lengths(e[None, :])[0])
        return ActionSequence(mu[:l].copy())
    if mode != "stochastic":
        raise UsageError(f"unknown decode mode {mode!r}")
    l = sample_length(e, rng)
    acts = mu[:l]
    if out.gaussian:
        acts = np.clip(acts + out.stds.data[row, :l] * rng.standard_normal(acts.shape), -1.0, 1.0)
    return ActionSequence(acts.copy())


def length_log_prob(term_logits: Tensor, lengths) -> Tensor:
    """log p(l | e) per row, from termination logits (N, L-1)."""
    lengths = np.asarray(lengths)
    N, Lm1 = term_logits.shape
    if Lm1 == 0:
        return Tensor(np.zeros(N))
    j = np.arange(1, Lm1 + 1)[None, :]
    before = (j < lengths[:, None]).astype(np.float64)
    at = (j == lengths[:, None]).astype(np.float64)
    log_stop = -ad.softplus(-term_logits)      # log e_j
    log_go = -ad.softplus(term_logits)         # log (1 - e_j)
    return ad.tsum(log_go * before + log_stop * at, axis=1)


def sequence_log_prob(actions, lengths, out: DecoderOutput) -> Tensor:
    """log p(a_{1:l} | n): length term plus independent Gaussian densities of the first l actions.

    ``actions`` are the pre-clamp samples, shape (N, L, |a|); slots past each length are ignored.
    """
    if not out.gaussian:
        raise UsageError("sequence_log_prob needs a Gaussian decoder output")
    actions = ad.as_tensor(actions)
    L = out.actions.shape[1]
    keep = prefix_mask(lengths, L).astype(np.float64)[:, :, None]
    z = (actions - out.actions) / out.stds
    log_density = -0.5 * ad.square(z) - ad.log(out.stds) - 0.5 * LOG_2PI
    return ad.tsum(ad.tsum(log_density * keep, axis=2), axis=1) + length_log_prob(out.term_logits, lengths)


def per_action_entropy(logp, l):
    """Single-sample entropy estimate normalised by the executed length: -logp / l."""
    l_arr = np.asarray(l)
    if np.any(l_arr < 1):
        raise UsageError(f"per-action entropy needs length >= 1, got {l}")
    if isinstance(logp, Tensor):
        return -logp / l_arr.astype(np.float64)
    return -np.asarray(logp, dtype=np.float64) / l_arr


# ---------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path, networks: dict[str, ParameterSet], header: dict) -> Path:
    """Write ``<net>/<param>`` arrays plus a JSON header into one ``.npz`` file."""
    path = Path(path)
    arrays = {f"{net}/{name}": t.data for net, ps in networks.items() for name, t in ps.items()}
    arrays["__header__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[dict, dict[str, dict[str, np.ndarray]]]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"]))
        nets: dict[str, dict[str, np.ndarray]] = {}
        for key in data.files:
            if key == "__header__":
                continue
            net, name = key.split("/", 1)
            nets.setdefault(net, {})[name] = data[key]
    return header, nets
