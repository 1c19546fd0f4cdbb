"""Training objectives for routine agents.

Every sampling step inside a loss is driven by pre-drawn noise arrays
(uniforms for length coin flips, standard normals for Gaussian actions and
target smoothing) so that a loss is a deterministic function of the network
parameters once its noise is fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .buffer import SequenceBatch
from .errors import ConfigError
from .models import (
    DecoderOutput,
    Policy,
    QNetwork,
    RoutineDecoder,
    RoutineEncoder,
    length_log_prob,
    lengths_from_uniforms,
    sequence_log_prob,
)


@dataclass(frozen=True)
class DiscountMatrices:
    r_disc: np.ndarray       # (L, L): gamma**i where j >= i
    next_q_disc: np.ndarray  # (L,): gamma**1 .. gamma**L


def discount_matrices(L: int, gamma: float) -> DiscountMatrices:
    if L < 1 or not 0.0 < gamma <= 1.0:
        raise ConfigError(f"discount matrices need L >= 1 and 0 < gamma <= 1, got L={L}, gamma={gamma}")
    powers = gamma ** np.arange(L, dtype=np.float64)
    return DiscountMatrices(np.triu(np.ones((L, L))) * powers[:, None], gamma * powers)


@dataclass
class TargetNoise:
    """Frozen randomness for one TD-target computation over an (N, L) batch."""

    length_u: np.ndarray                 # (N, L, L-1) uniforms for the decoded length
    smoothing: np.ndarray | None = None  # (N, L, |n|) standard normals, TD3
    action_xi: np.ndarray | None = None  # (N, L, L, |a|) standard normals, SAC

    @classmethod
    def draw(cls, rng: np.random.Generator, N: int, L: int, action_dim: int, kind: str) -> "TargetNoise":
        u = rng.random((N, L, L - 1))
        if kind == "td3":
            return cls(u, smoothing=rng.standard_normal((N, L, L * action_dim)))
        return cls(u, action_xi=rng.standard_normal((N, L, L, action_dim)))


@dataclass
class PolicyNoise:
    """Frozen randomness for one policy / consistency loss evaluation over N states."""

    length_u: np.ndarray                 # (N, L-1)
    action_xi: np.ndarray | None = None  # (N, L, |a|), Gaussian decoder only

    @classmethod
    def draw(cls, rng: np.random.Generator, N: int, L: int, action_dim: int, gaussian: bool) -> "PolicyNoise":
        u = rng.random((N, L - 1))
        return cls(u, rng.standard_normal((N, L, action_dim)) if gaussian else None)


def combine_targets(batch: SequenceBatch, next_values: np.ndarray, gamma: float) -> np.ndarray:
    """y_l = sum_{j<=l} gamma^{j-1} r_j + cont_l * gamma^l * next_values_l, in matrix form."""
    dm = discount_matrices(batch.L, gamma)
    r = np.where(batch.valid > 0, batch.r, 0.0)
    boot = np.where(batch.cont > 0, next_values, 0.0)
    return r @ dm.r_disc + batch.cont * dm.next_q_disc[None, :] * boot


def _valid_next_states(batch: SequenceBatch) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices of sub-steps whose bootstrap term is needed, and their next states."""
    need = (batch.cont > 0).reshape(-1)
    rows = np.flatnonzero(need)
    return rows, batch.s_next.reshape(-1, batch.s_next.shape[-1])[rows]


def next_values_td3(batch: SequenceBatch, policy: Policy, decoder: RoutineDecoder,
                    encoder: RoutineEncoder, target_qs: tuple[QNetwork, QNetwork],
                    noise: TargetNoise, smoothing_std: float = 0.1,
                    smoothing_clip: float = 0.25) -> np.ndarray:
    """Twin-min target Q of the auto-encoded, smoothed policy routine at each next state."""
    N, L = batch.r.shape
    values = np.zeros(N * L)
    rows, states = _valid_next_states(batch)
    if len(rows) == 0:
        return values.reshape(N, L)
    with ad.no_grad():
        n_next = policy(states)
        out = decoder(n_next)
        lengths = lengths_from_uniforms(out.term_probs, noise.length_u.reshape(N * L, L - 1)[rows])
        routine = encoder(out.actions, lengths).data
        eps = np.clip(smoothing_std * noise.smoothing.reshape(N * L, -1)[rows], -smoothing_clip, smoothing_clip)
        routine = np.clip(routine + eps, -1.0, 1.0)
        q = np.minimum(target_qs[0].value(states, routine).data, target_qs[1].value(states, routine).data)
    values[rows] = q
    return values.reshape(N, L)


def next_values_sac(batch: SequenceBatch, policy: Policy, decoder: RoutineDecoder,
                    encoder: RoutineEncoder, target_qs: tuple[QNetwork, QNetwork],
                    alpha: float, noise: TargetNoise) -> np.ndarray:
    """Twin-min target Q of one stochastic decode, minus alpha times its log-probability."""
    N, L = batch.r.shape
    values = np.zeros(N * L)
    rows, states = _valid_next_states(batch)
    if len(rows) == 0:
        return values.reshape(N, L)
    with ad.no_grad():
        out = decoder(policy(states))
        lengths = lengths_from_uniforms(out.term_probs, noise.length_u.reshape(N * L, L - 1)[rows])
        xi = noise.action_xi.reshape(N * L, L, -1)[rows]
        sample = out.actions.data + out.stds.data * xi
        logp = sequence_log_prob(sample, lengths, out).data
        routine = encoder(np.clip(sample, -1.0, 1.0), lengths).data
        q = np.minimum(target_qs[0].value(states, routine).data, target_qs[1].value(states, routine).data)
    values[rows] = q - alpha * logp
    return values.reshape(N, L)


def td_targets_td3(batch, policy, decoder, encoder, target_qs, gamma: float,
                   smoothing_std: float, rng: np.random.Generator | None = None,
                   noise: TargetNoise | None = None, smoothing_clip: float = 0.25) -> np.ndarray:
    if noise is None:
        noise = TargetNoise.draw(rng, batch.size, batch.L, decoder.space.action_dim, "td3")
    nv = next_values_td3(batch, policy, decoder, encoder, target_qs, noise, smoothing_std, smoothing_clip)
    return combine_targets(batch, nv, gamma)


def td_targets_sac(batch, policy, decoder, encoder, target_qs, gamma: float, alpha: float,
                   rng: np.random.Generator | None = None, noise: TargetNoise | None = None) -> np.ndarray:
    if noise is None:
        noise = TargetNoise.draw(rng, batch.size, batch.L, decoder.space.action_dim, "sac")
    nv = next_values_sac(batch, policy, decoder, encoder, target_qs, alpha, noise)
    return combine_targets(batch, nv, gamma)


def routine_td_loss(batch: SequenceBatch, q_net: QNetwork, encoder: RoutineEncoder,
                    y: np.ndarray) -> tuple[Tensor, Tensor]:
    """Mean squared TD error over the valid prefixes of every window.

    Returns the loss and the encoded prefix routines, shape (N, L, |n|).
    """
    N, L = batch.r.shape
    prefixes = encoder.all_prefixes(batch.a)
    flat = ad.reshape(prefixes, (N * L, prefixes.shape[-1]))
    states = np.repeat(batch.s, L, axis=0)
    q = ad.reshape(q_net.value(states, flat), (N, L))
    valid = batch.valid > 0
    err = ad.where(valid, q - np.where(valid, y, 0.0), 0.0)
    return ad.tsum(ad.square(err)) / float(valid.sum()), prefixes


def lc_loss(out: DecoderOutput, lengths, weights=None) -> Tensor:
    """Length-consistency cross-entropy: -sum_{j<l} log(1 - e_j) - log e_l (no e_L term).

    This equals -log p(l | e); ``weights`` (0/1) select which rows count.
    """
    nll = -length_log_prob(out.term_logits, lengths)
    if weights is None:
        return ad.mean(nll)
    w = np.asarray(weights, dtype=np.float64)
    return ad.tsum(ad.where(w > 0, nll, 0.0)) / float(w.sum())


def prefix_lc_loss(prefixes: Tensor, decoder: RoutineDecoder, valid: np.ndarray) -> Tensor:
    """J_lc on encoded replay prefixes: the prefix of length l must decode to length l."""
    N, L, n = prefixes.shape
    out = decoder(ad.reshape(prefixes, (N * L, n)))
    lengths = np.tile(np.arange(1, L + 1), N)
    return lc_loss(out, lengths, valid.reshape(-1))


def _decoded_routine(decoder_out: DecoderOutput, encoder: RoutineEncoder, noise: PolicyNoise):
    """Sample one sequence per row with frozen noise and re-encode it (encoder weights frozen)."""
    lengths = lengths_from_uniforms(decoder_out.term_probs, noise.length_u)
    if decoder_out.gaussian:
        sample = decoder_out.actions + decoder_out.stds * noise.action_xi
        actions = ad.clip(sample, -1.0, 1.0)
    else:
        sample = actions = decoder_out.actions
    return encoder(actions, lengths, frozen=True), lengths, sample


def policy_loss_td3(states, policy: Policy, decoder: RoutineDecoder, encoder: RoutineEncoder,
                    q_net: QNetwork, noise: PolicyNoise) -> Tensor:
    """-mean Q(s, E(D(pi(s)))); the encoder and critic weights receive no gradient."""
    out = decoder(policy(states))
    routine, _, _ = _decoded_routine(out, encoder, noise)
    return -ad.mean(q_net.value(states, routine, frozen=True))


def policy_loss_sac(states, policy: Policy, decoder: RoutineDecoder, encoder: RoutineEncoder,
                    q_net: QNetwork, alpha: float, noise: PolicyNoise) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """-mean[Q(s, E(a_{1:l})) - alpha log p(a_{1:l} | pi(s))] with reparameterised samples.

    Also returns the detached log-probabilities and lengths for temperature tuning.
    """
    out = decoder(policy(states))
    routine, lengths, sample = _decoded_routine(out, encoder, noise)
    logp = sequence_log_prob(sample, lengths, out)
    q = q_net.value(states, routine, frozen=True)
    return -ad.mean(q - alpha * logp), logp.data.copy(), lengths


def mto_loss(routines, decoder: RoutineDecoder, encoder: RoutineEncoder, noise: PolicyNoise) -> Tensor:
    """Many-to-one consistency: mean ||E(D(n)) - n||^2, trained through the decoder only."""
    n = np.asarray(routines.data if isinstance(routines, Tensor) else routines, dtype=np.float64)
    out = decoder(Tensor(n))
    routine, _, _ = _decoded_routine(out, encoder, noise)
    return ad.mean(ad.tsum(ad.square(routine - n), axis=1))


def temperature_loss(per_action_logp, log_alpha: Tensor, target_entropy: float) -> Tensor:
    """-mean[log alpha * (per-action log p + target)]: raises alpha when entropy is below target."""
    if not np.isfinite(log_alpha.data).all():
        raise ConfigError("temperature must be positive and finite")
    logp = np.asarray(per_action_logp, dtype=np.float64)
    return -ad.mean(log_alpha * (logp + target_entropy))


# ---------------------------------------------------------------------------
# single-step objectives used by the baseline agents

def single_step_targets(r: np.ndarray, cont: np.ndarray, next_q: np.ndarray, gamma: float) -> np.ndarray:
    return r + gamma * cont * next_q


def single_step_td_loss(q_net: QNetwork, s, x, y: np.ndarray) -> Tensor:
    return ad.mean(ad.square(q_net.value(s, x) - y))
