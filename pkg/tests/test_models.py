import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routine_rl import autodiff as ad
from routine_rl.autodiff import Tape
from routine_rl.config import AgentConfig
from routine_rl.errors import ConfigError, UsageError
from routine_rl.models import (
    ActionSequence,
    DecoderOutput,
    Policy,
    QNetwork,
    RoutineDecoder,
    RoutineEncoder,
    RoutineSpaceSpec,
    decode_sample,
    deterministic_lengths,
    length_log_prob,
    length_probabilities,
    load_checkpoint,
    per_action_entropy,
    sample_length,
    save_checkpoint,
    sequence_log_prob,
)
from routine_rl.params import ParameterSet

import oracles


def logits_of(e):
    e = np.asarray(e, dtype=float)
    return ad.Tensor(np.log(e) - np.log1p(-e))


@pytest.mark.parametrize("a, L, n, h, g", [(2, 4, 8, 2, 8), (1, 1, 1, 1, 1), (3, 2, 6, 4, 8), (6, 16, 96, 8, 128)])
def test_space_dimensions(a, L, n, h, g):
    sp = RoutineSpaceSpec(L, a)
    assert (sp.routine_dim, sp.hidden_dim, sp.aggregate_dim) == (n, h, g)


def test_decoder_shapes_and_ranges(space, rng):
    dec = RoutineDecoder(space, rng)
    out = dec(rng.uniform(-1, 1, (5, 8)) * 10)
    assert out.actions.shape == (5, 4, 2) and out.term_logits.shape == (5, 3)
    assert space.hidden_dim == 2
    e = out.term_probs
    assert ((e > 0) & (e < 1)).all()
    assert (np.abs(out.actions.data) <= 1).all()
    np.testing.assert_array_equal(dec(np.ones((1, 8))).actions.data, dec(np.ones((1, 8))).actions.data)


def test_decoder_matches_loop_oracle(space, rng):
    dec = RoutineDecoder(space, rng, gaussian=True)
    n = rng.uniform(-1, 1, (3, 8))
    out = dec(n)
    for i in range(3):
        acts, e, std = oracles.decoder(dec.params.arrays(), n[i], 4, 2, 2, gaussian=True)
        np.testing.assert_allclose(out.actions.data[i], acts, atol=1e-14)
        np.testing.assert_allclose(out.term_probs[i], e, atol=1e-14)
        np.testing.assert_allclose(out.stds.data[i], std, atol=1e-14)
        assert (out.stds.data[i] >= 1e-4).all()


def test_decoder_rejects_wrong_routine_dim(space, rng):
    with pytest.raises(ConfigError):
        RoutineDecoder(space, rng)(np.zeros((2, 7)))


def test_sample_length_extremes(rng):
    assert all(sample_length([1 - 1e-12, 0.5, 0.5], rng) == 1 for _ in range(200))
    assert all(sample_length([1e-12] * 3, rng) == 4 for _ in range(200))


def test_sample_length_half_half(rng):
    draws = np.array([sample_length([0.5, 0.5], rng) for _ in range(100_000)])
    freq = np.bincount(draws, minlength=4)[1:] / len(draws)
    np.testing.assert_allclose(freq, [0.5, 0.25, 0.25], atol=0.01)


@settings(max_examples=50, deadline=None)
@given(e=st.lists(st.floats(1e-6, 1 - 1e-6), min_size=0, max_size=15))
def test_length_probabilities_sum_to_one_and_match_loop(e):
    p = length_probabilities(e)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(p, oracles.length_probs(e), rtol=1e-12, atol=1e-300)


def test_deterministic_length_rule():
    assert list(deterministic_lengths(np.array([[0.9, 0.1, 0.1], [0.2, 0.4, 0.49], [0.1, 0.7, 0.9]]))) == [1, 4, 2]


def test_gaussian_sample_with_tiny_std_equals_mean(space, rng):
    mu = np.tanh(rng.standard_normal((1, 4, 2)))
    out = DecoderOutput(ad.Tensor(mu), logits_of([[0.3, 0.3, 0.3]]), ad.Tensor(np.full((1, 4, 2), 1e-9)))
    seq = decode_sample(out, rng, "stochastic")
    np.testing.assert_allclose(seq.actions, mu[0, :seq.length], atol=1e-6)


def test_encoder_forward_matches_loop_and_is_deterministic(space, rng):
    enc = RoutineEncoder(space, rng)
    acts = rng.uniform(-1, 1, (6, 4, 2))
    lengths = np.array([1, 2, 3, 4, 2, 1])
    out = enc(acts, lengths).data
    assert out.shape == (6, 8)
    for i, l in enumerate(lengths):
        np.testing.assert_allclose(out[i], oracles.encoder(enc.params.arrays(), acts[i], l), atol=1e-14)
    np.testing.assert_array_equal(enc(acts, lengths).data, out)


def test_encoder_ignores_positions_past_length(space, rng):
    enc = RoutineEncoder(space, rng)
    a = rng.uniform(-1, 1, (1, 4, 2))
    b = a.copy()
    b[0, 2:] = 99.0
    np.testing.assert_array_equal(enc(a, [2]).data, enc(b, [2]).data)


def test_encoder_length_out_of_range(space, rng):
    enc = RoutineEncoder(space, rng)
    with pytest.raises(UsageError):
        enc(np.zeros((1, 4, 2)), [0])
    with pytest.raises(UsageError):
        enc.encode(ActionSequence(np.zeros((5, 2))))


def test_encoder_is_order_sensitive():
    flips = 0
    for seed in range(20):
        r = np.random.default_rng(seed)
        enc = RoutineEncoder(RoutineSpaceSpec(4, 2), r)
        a = r.uniform(-1, 1, (1, 4, 2))
        b = a[:, [1, 0, 2, 3]]
        flips += not np.allclose(enc(a, [2]).data, enc(b, [2]).data)
    assert flips == 20


@pytest.mark.parametrize("L", [1, 2, 4])
def test_all_prefixes_identity(L, rng):
    enc = RoutineEncoder(RoutineSpaceSpec(L, 3), rng)
    acts = rng.uniform(-1, 1, (10, L, 3))
    pre = enc.all_prefixes(acts).data
    for l in range(1, L + 1):
        np.testing.assert_allclose(pre[:, l - 1], enc(acts, np.full(10, l)).data, atol=1e-12, rtol=0)


def test_all_prefixes_single_pass_op_count(space, rng):
    enc = RoutineEncoder(space, rng)
    acts = rng.uniform(-1, 1, (5, 4, 2))
    with Tape() as tape:
        enc.all_prefixes(acts)
    # one embedding row and one index-specific projection per position
    assert tape.op_counts["linear"] == 2  # embedding + output head, both batched
    assert tape.op_rows["linear"] == 5 * 4 + 5 * 4
    assert tape.op_counts["einsum"] == 1 and tape.op_rows["einsum"] == 5


def test_policy_bounded_and_q_deterministic(rng):
    pol = Policy(6, 8, 32, rng)
    assert (np.abs(pol(rng.standard_normal((20, 6)) * 100).data) <= 1).all()
    q = QNetwork(6, 8, 32, rng)
    s, n = rng.standard_normal((3, 6)), rng.uniform(-1, 1, (3, 8))
    np.testing.assert_array_equal(q.value(s, n).data, q.value(s, n).data)
    assert q.value(s, n).shape == (3,)
    with pytest.raises(ConfigError):
        q.value(s, n[:, :5])


def test_full_scale_profile_width():
    assert AgentConfig.full_scale_profile().hidden_dim == 256
    assert AgentConfig.full_scale_profile().buffer_size == 100_000


def test_sequence_log_prob_standard_normal_mode():
    out = DecoderOutput(ad.Tensor(np.zeros((1, 2, 1))), logits_of([[1 - 1e-15]]), ad.Tensor(np.ones((1, 2, 1))))
    lp = sequence_log_prob(np.zeros((1, 2, 1)), [1], out).item()
    assert abs(lp - (-0.5 * math.log(2 * math.pi))) < 1e-9
    assert abs(lp + 0.9189) < 1e-4


def test_sequence_log_prob_doubling_std(rng):
    mu = rng.uniform(-0.5, 0.5, (1, 3, 2))
    lg = logits_of([[0.3, 0.6]])
    one = sequence_log_prob(mu, [3], DecoderOutput(ad.Tensor(mu), lg, ad.Tensor(np.full((1, 3, 2), 0.4))))
    two = sequence_log_prob(mu, [3], DecoderOutput(ad.Tensor(mu), lg, ad.Tensor(np.full((1, 3, 2), 0.8))))
    assert abs((one.item() - two.item()) - 6 * math.log(2)) < 1e-12


def test_length_term_of_log_prob():
    assert abs(length_log_prob(logits_of([[0.5, 0.5]]), [2]).item() - math.log(0.25)) < 1e-12
    assert abs(length_log_prob(logits_of([[0.5, 0.5]]), [3]).item() - math.log(0.25)) < 1e-12


def test_sequence_log_prob_matches_loop(rng):
    dec = RoutineDecoder(RoutineSpaceSpec(3, 2), rng, gaussian=True)
    n = rng.uniform(-1, 1, (4, 6))
    out = dec(n)
    sample = out.actions.data + out.stds.data * rng.standard_normal((4, 3, 2))
    lengths = np.array([1, 2, 3, 2])
    lp = sequence_log_prob(sample, lengths, out).data
    for i in range(4):
        mu, e, std = oracles.decoder(dec.params.arrays(), n[i], 3, 2, 2, gaussian=True)
        assert abs(lp[i] - oracles.gaussian_seq_logp(sample[i], mu, std, e, lengths[i])) < 1e-11


def test_per_action_entropy():
    assert per_action_entropy(-2.0, 2) == 1.0
    assert per_action_entropy(-3.5, 1) == 3.5
    assert per_action_entropy(-6.0, 6) == per_action_entropy(-2.0, 2)
    with pytest.raises(UsageError):
        per_action_entropy(-1.0, 0)


def test_checkpoint_round_trip(tmp_path, rng):
    nets = {"dec": ParameterSet({"l0.W": rng.standard_normal((3, 2))}), "q": ParameterSet({"b": np.ones(2)})}
    path = save_checkpoint(tmp_path / "c.npz", nets, {"L": 4})
    header, arrays = load_checkpoint(path)
    assert header == {"L": 4}
    np.testing.assert_array_equal(arrays["dec"]["l0.W"], nets["dec"]["l0.W"].data)
    assert save_checkpoint(tmp_path / "d.npz", nets, {"L": 4}).read_bytes() == path.read_bytes()
