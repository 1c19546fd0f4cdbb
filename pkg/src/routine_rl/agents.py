"""Routine TD3 / Routine SAC agents, single-action TD3 / SAC baselines, and the rollout loop."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator

import numpy as np

from . import autodiff as ad
from . import losses as L
from .autodiff import Tape
from .buffer import ReplayBuffer, Transition
from .config import AgentConfig
from .envs import Env, EnvSpec
from .errors import UsageError
from .models import (
    LOG_2PI,
    STD_FLOOR,
    ActionSequence,
    MLP,
    Policy,
    QNetwork,
    RoutineDecoder,
    RoutineEncoder,
    RoutineSpaceSpec,
    decode_sample,
    load_checkpoint,
    save_checkpoint,
)
from .params import ParameterSet, adam_step, polyak_update

CHECKPOINT_VERSION = 1


@dataclass
class LossBundle:
    j_q: float
    j_lc: float = 0.0
    j_pi: float | None = None
    j_mto: float | None = None
    j_alpha: float | None = None
    alpha: float | None = None
    encoded_routines: np.ndarray | None = None


class Agent:
    """Shared plumbing: configuration, rng, update counter and checkpointing."""

    def __init__(self, config: AgentConfig, env_spec: EnvSpec, seed: int):
        self.cfg = config
        self.env_spec = env_spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.updates = 0
        self.space = RoutineSpaceSpec(config.effective_L, env_spec.action_dim)

    def networks(self) -> dict[str, ParameterSet]:
        raise NotImplementedError

    def act(self, s, mode: str = "explore") -> ActionSequence:
        raise NotImplementedError

    def train_step(self, buffer: ReplayBuffer) -> LossBundle:
        raise NotImplementedError

    def _adam(self, *nets) -> None:
        for net in nets:
            adam_step(net.params if hasattr(net, "params") else net, self.cfg.lr, self.cfg.beta1)

    def _check_buffer(self, buffer: ReplayBuffer) -> None:
        if len(buffer) < self.cfg.min_data:
            raise UsageError(f"train_step needs {self.cfg.min_data} transitions, buffer has {len(buffer)}")

    def save(self, path) -> None:
        sp = self.space
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.cfg),
            "env": asdict(self.env_spec),
            "seed": self.seed,
            "updates": self.updates,
            "routine_space": {"L": sp.L, "action_dim": sp.action_dim, "routine_dim": sp.routine_dim,
                              "hidden_dim": sp.hidden_dim, "aggregate_dim": sp.aggregate_dim},
        }
        save_checkpoint(path, self.networks(), header)

    def load_arrays(self, nets: dict[str, dict[str, np.ndarray]]) -> None:
        mine = self.networks()
        if set(mine) != set(nets):
            raise UsageError(f"checkpoint networks {sorted(nets)} do not match agent {sorted(mine)}")
        for name, arrays in nets.items():
            mine[name].load(arrays)


def _clone(net):
    """Target network: same architecture, independent copy of the weights."""
    twin = copy.copy(net)
    twin.params = net.params.copy()
    return twin


def _gaussian(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    return x + std * rng.standard_normal(x.shape)


class RoutineAgent(Agent):
    """Policy over routines with a learned decoder/encoder pair (TD3 or SAC flavour)."""

    def __init__(self, config: AgentConfig, env_spec: EnvSpec, seed: int):
        super().__init__(config, env_spec, seed)
        sp, rng, c = self.space, self.rng, config
        self.sac = config.is_sac
        self.policy = Policy(env_spec.state_dim, sp.routine_dim, c.hidden_dim, rng, c.activation, c.hidden_layers)
        self.q1 = QNetwork(env_spec.state_dim, sp.routine_dim, c.hidden_dim, rng, c.activation, c.hidden_layers)
        self.q2 = QNetwork(env_spec.state_dim, sp.routine_dim, c.hidden_dim, rng, c.activation, c.hidden_layers)
        self.decoder = RoutineDecoder(sp, rng, gaussian=self.sac)
        self.encoder = RoutineEncoder(sp, rng)
        self.q1_target = _clone(self.q1)
        self.q2_target = _clone(self.q2)
        self.log_alpha = ParameterSet({"log_alpha": np.array(math.log(c.alpha_init))})
        self.target_entropy = -float(env_spec.action_dim)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"].data))

    def networks(self) -> dict[str, ParameterSet]:
        nets = {"policy": self.policy.params, "q1": self.q1.params, "q2": self.q2.params,
                "q1_target": self.q1_target.params, "q2_target": self.q2_target.params,
                "decoder": self.decoder.params, "encoder": self.encoder.params}
        if self.sac:
            nets["log_alpha"] = self.log_alpha
        return nets

    # -- acting --------------------------------------------------------------

    def policy_routine(self, s) -> np.ndarray:
        with ad.no_grad():
            return self.policy(np.asarray(s, dtype=np.float64)[None, :]).data[0]

    def act(self, s, mode: str = "explore") -> ActionSequence:
        c = self.cfg
        n = self.policy_routine(s)
        quiet = not self.sac and c.disable_routine_noise and c.disable_action_noise
        if mode == "eval" or quiet:
            with ad.no_grad():
                seq = decode_sample(self.decoder(n[None, :]), mode="deterministic")
        elif mode == "explore":
            if not self.sac and not c.disable_routine_noise:
                n = np.clip(_gaussian(n, c.routine_noise, self.rng), -1.0, 1.0)
            with ad.no_grad():
                seq = decode_sample(self.decoder(n[None, :]), self.rng, mode="stochastic")
            if not self.sac and not c.disable_action_noise:
                seq = ActionSequence(np.clip(_gaussian(seq.actions, c.action_noise, self.rng), -1.0, 1.0))
        else:
            raise UsageError(f"unknown act mode {mode!r}")
        if c.replan_mode:
            seq = ActionSequence(seq.actions[:1])
        return seq

    # -- learning ------------------------------------------------------------

    def targets(self, batch) -> np.ndarray:
        c = self.cfg
        qs = (self.q1_target, self.q2_target)
        if self.sac:
            return L.td_targets_sac(batch, self.policy, self.decoder, self.encoder, qs, c.gamma, self.alpha, self.rng)
        return L.td_targets_td3(batch, self.policy, self.decoder, self.encoder, qs, c.gamma,
                                c.target_smoothing, self.rng, smoothing_clip=c.smoothing_clip)

    def critic_update(self, batch, y: np.ndarray) -> tuple[float, float, np.ndarray]:
        """One pass per critic: J_Q + J_lc, stepping that critic plus the encoder and decoder."""
        jq_sum = jlc_sum = 0.0
        prefixes = None
        for q in (self.q1, self.q2):
            with Tape() as tape:
                jq, prefixes = L.routine_td_loss(batch, q, self.encoder, y)
                total = jq
                if self.space.L > 1:
                    jlc = L.prefix_lc_loss(prefixes, self.decoder, batch.valid)
                    total = jq + self.cfg.j_lc_coeff * jlc
                    jlc_sum += jlc.item()
                tape.backward(total)
            jq_sum += jq.item()
            self._adam(q, self.encoder, self.decoder)
        return jq_sum / 2.0, jlc_sum / 2.0, prefixes.data

    def actor_update(self, states: np.ndarray) -> dict:
        """J_pi (+ entropy for SAC) and J_mto: steps the policy and the decoder."""
        c, sp = self.cfg, self.space
        noise = L.PolicyNoise.draw(self.rng, len(states), sp.L, sp.action_dim, self.sac)
        with ad.no_grad():
            n = self.policy(states).data
        out = {}
        with Tape() as tape:
            if self.sac:
                jpi, logp, lengths = L.policy_loss_sac(states, self.policy, self.decoder, self.encoder,
                                                       self.q1, self.alpha, noise)
            else:
                jpi = L.policy_loss_td3(states, self.policy, self.decoder, self.encoder, self.q1, noise)
            jmto = L.mto_loss(n, self.decoder, self.encoder, noise)
            tape.backward(jpi + c.j_mto_coeff * jmto)
        self._adam(self.policy, self.decoder)
        out["j_pi"], out["j_mto"] = jpi.item(), jmto.item()
        if self.sac:
            out["j_alpha"] = self._temperature_update(logp / lengths)
        return out

    def _temperature_update(self, per_action_logp: np.ndarray) -> float:
        with Tape() as tape:
            loss = L.temperature_loss(per_action_logp, self.log_alpha["log_alpha"], self.target_entropy)
            tape.backward(loss)
        adam_step(self.log_alpha, self.cfg.alpha_lr, self.cfg.alpha_beta1)
        return loss.item()

    def train_step(self, buffer: ReplayBuffer) -> LossBundle:
        self._check_buffer(buffer)
        c = self.cfg
        batch = buffer.sample_batch(c.batch_size, self.space.L, self.rng)
        y = self.targets(batch)
        jq, jlc, prefixes = self.critic_update(batch, y)
        self.updates += 1
        bundle = LossBundle(j_q=jq, j_lc=jlc, encoded_routines=prefixes)
        if self.updates % c.policy_delay == 0:
            out = self.actor_update(batch.s)
            bundle.j_pi, bundle.j_mto = out["j_pi"], out["j_mto"]
            bundle.j_alpha = out.get("j_alpha")
            polyak_update(self.q1_target.params, self.q1.params, c.rho)
            polyak_update(self.q2_target.params, self.q2.params, c.rho)
        if self.sac:
            bundle.alpha = self.alpha
        return bundle


class BaselineAgent(Agent):
    """Single-action TD3 (with target policy) or SAC (tanh-squashed Gaussian policy)."""

    def __init__(self, config: AgentConfig, env_spec: EnvSpec, seed: int):
        super().__init__(config, env_spec, seed)
        c, rng, a = config, self.rng, env_spec.action_dim
        self.sac = config.is_sac
        hidden = [c.hidden_dim] * c.hidden_layers
        if self.sac:
            self.policy = MLP(env_spec.state_dim, hidden, 2 * a, rng, c.activation)
        else:
            self.policy = MLP(env_spec.state_dim, hidden, a, rng, c.activation, output="tanh")
        self.q1 = QNetwork(env_spec.state_dim, a, c.hidden_dim, rng, c.activation, c.hidden_layers)
        self.q2 = QNetwork(env_spec.state_dim, a, c.hidden_dim, rng, c.activation, c.hidden_layers)
        self.q1_target = _clone(self.q1)
        self.q2_target = _clone(self.q2)
        self.policy_target = None
        if not self.sac:
            self.policy_target = _clone(self.policy)
        self.log_alpha = ParameterSet({"log_alpha": np.array(math.log(c.alpha_init))})
        self.target_entropy = -float(a)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha["log_alpha"].data))

    def networks(self) -> dict[str, ParameterSet]:
        nets = {"policy": self.policy.params, "q1": self.q1.params, "q2": self.q2.params,
                "q1_target": self.q1_target.params, "q2_target": self.q2_target.params}
        if self.sac:
            nets["log_alpha"] = self.log_alpha
        else:
            nets["policy_target"] = self.policy_target.params
        return nets

    def _squashed(self, s, xi: np.ndarray | None, frozen: bool = False):
        """tanh-Gaussian sample (or mean when ``xi`` is None) and its log-probability."""
        a = self.env_spec.action_dim
        out = self.policy(s, frozen)
        mu, std = out[:, :a], ad.softplus(out[:, a:]) + STD_FLOOR
        if xi is None:
            return ad.tanh(mu), None
        u = mu + std * xi
        act = ad.tanh(u)
        logp = ad.tsum(-0.5 * ad.square((u - mu) / std) - ad.log(std) - 0.5 * LOG_2PI
                       - ad.log(1.0 - ad.square(act) + 1e-6), axis=1)
        return act, logp

    def act(self, s, mode: str = "explore") -> ActionSequence:
        s = np.asarray(s, dtype=np.float64)[None, :]
        with ad.no_grad():
            if self.sac:
                xi = self.rng.standard_normal((1, self.env_spec.action_dim)) if mode == "explore" else None
                a = self._squashed(s, xi)[0].data[0]
            else:
                a = self.policy(s).data[0]
                if mode == "explore" and not self.cfg.disable_action_noise:
                    a = np.clip(_gaussian(a, self.cfg.action_noise, self.rng), -1.0, 1.0)
        if mode not in ("explore", "eval"):
            raise UsageError(f"unknown act mode {mode!r}")
        return ActionSequence(a[None, :])

    def next_values(self, s_next: np.ndarray) -> np.ndarray:
        c = self.cfg
        with ad.no_grad():
            if self.sac:
                xi = self.rng.standard_normal((len(s_next), self.env_spec.action_dim))
                a_next, logp = self._squashed(s_next, xi)
                a_next, logp = a_next.data, logp.data
            else:
                a_next = self.policy_target(s_next).data
                eps = np.clip(c.td3_target_noise * self.rng.standard_normal(a_next.shape),
                              -c.td3_noise_clip, c.td3_noise_clip)
                a_next, logp = np.clip(a_next + eps, -1.0, 1.0), None
            q = np.minimum(self.q1_target.value(s_next, a_next).data, self.q2_target.value(s_next, a_next).data)
        return q - self.alpha * logp if self.sac else q

    def train_step(self, buffer: ReplayBuffer) -> LossBundle:
        self._check_buffer(buffer)
        c = self.cfg
        batch = buffer.sample_batch(c.batch_size, 1, self.rng)
        s, a = batch.s, batch.a[:, 0]
        y = L.single_step_targets(batch.r[:, 0], batch.cont[:, 0], self.next_values(batch.s_next[:, 0]), c.gamma)
        with Tape() as tape:
            j1 = L.single_step_td_loss(self.q1, s, a, y)
            j2 = L.single_step_td_loss(self.q2, s, a, y)
            tape.backward(j1 + j2)
        self._adam(self.q1, self.q2)
        self.updates += 1
        bundle = LossBundle(j_q=(j1.item() + j2.item()) / 2.0)
        delay = 1 if self.sac else c.policy_delay
        if self.updates % delay == 0:
            with Tape() as tape:
                if self.sac:
                    xi = self.rng.standard_normal(a.shape)
                    act, logp = self._squashed(s, xi)
                    jpi = -ad.mean(self.q1.value(s, act, frozen=True) - self.alpha * logp)
                else:
                    jpi = -ad.mean(self.q1.value(s, self.policy(s), frozen=True))
                tape.backward(jpi)
            self._adam(self.policy)
            bundle.j_pi = jpi.item()
            if self.sac:
                with Tape() as tape:
                    ja = L.temperature_loss(logp.data, self.log_alpha["log_alpha"], self.target_entropy)
                    tape.backward(ja)
                adam_step(self.log_alpha, c.alpha_lr, c.alpha_beta1)
                bundle.j_alpha = ja.item()
            polyak_update(self.q1_target.params, self.q1.params, c.rho)
            polyak_update(self.q2_target.params, self.q2.params, c.rho)
            if self.policy_target is not None:
                polyak_update(self.policy_target.params, self.policy.params, c.rho)
        if self.sac:
            bundle.alpha = self.alpha
        return bundle


def make_agent(config: AgentConfig, env_spec: EnvSpec, seed: int) -> Agent:
    cls = RoutineAgent if config.is_routine else BaselineAgent
    return cls(config, env_spec, seed)


def load_agent(path) -> Agent:
    header, nets = load_checkpoint(path)
    cfg = AgentConfig(**header["config"])
    env = header["env"]
    spec = EnvSpec(env["name"], env["state_dim"], env["action_dim"], env["episode_length"])
    agent = make_agent(cfg, spec, header["seed"])
    agent.load_arrays(nets)
    agent.updates = header.get("updates", 0)
    return agent


# ---------------------------------------------------------------------------
# rollouts

@dataclass
class EpisodeRecord:
    ret: float
    policy_queries: int
    lengths: list[int]


@dataclass
class CollectStats:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    losses: list[LossBundle] = field(default_factory=list)
    env_steps: int = 0
    train_steps: int = 0


class Collector:
    """Training rollout loop: open-loop routine execution, one train_step per env step.

    Keeps episode state between calls so training can be paused at epoch boundaries.
    """

    def __init__(self, agent: Agent, env: Env, buffer: ReplayBuffer, seed: int):
        self.agent, self.env, self.buffer = agent, env, buffer
        self.rng = np.random.default_rng([seed, 1])
        self.total_steps = 0
        self.train_steps = 0
        self.first_update_step: int | None = None
        self.episode_id = -1
        self.state: np.ndarray | None = None
        self.queue: list[np.ndarray] = []

    def _start_episode(self) -> None:
        self.episode_id += 1
        self.state = self.env.reset(int(self.rng.integers(2**31)))
        self.step_index = 0
        self.ep_return = 0.0
        self.ep_queries = 0
        self.ep_lengths: list[int] = []

    def _next_action(self) -> np.ndarray:
        if not self.queue:
            if self.total_steps < self.agent.cfg.min_data:
                a_dim = self.env.spec().action_dim
                seq = ActionSequence(self.rng.uniform(-1.0, 1.0, size=(1, a_dim)))
            else:
                seq = self.agent.act(self.state, "explore")
            self.queue = list(seq.actions)
            self.ep_queries += 1
            self.ep_lengths.append(0)
        self.ep_lengths[-1] += 1
        return self.queue.pop(0)

    def run(self, n_steps: int) -> CollectStats:
        stats = CollectStats()
        for _ in range(n_steps):
            if self.state is None:
                self._start_episode()
            a = self._next_action()
            res = self.env.step(a)
            self.buffer.push(Transition(self.state, a, res.next_state, res.reward, res.terminal,
                                        self.episode_id, self.step_index))
            self.total_steps += 1
            stats.env_steps += 1
            self.step_index += 1
            self.ep_return += res.reward
            self.state = res.next_state
            if self.total_steps > self.agent.cfg.min_data:
                stats.losses.append(self.agent.train_step(self.buffer))
                stats.train_steps += 1
                self.train_steps += 1
                if self.first_update_step is None:
                    self.first_update_step = self.total_steps
            if res.terminal:
                stats.episodes.append(EpisodeRecord(self.ep_return, self.ep_queries, self.ep_lengths))
                self.state = None
                self.queue = []
        return stats


def collect_and_train(agent: Agent, env: Env, total_env_steps: int, seed: int = 0,
                      buffer: ReplayBuffer | None = None, chunk: int = 1000) -> Iterator[CollectStats]:
    """Run the training loop for ``total_env_steps``, yielding stats every ``chunk`` steps."""
    spec = env.spec()
    if buffer is None:
        buffer = ReplayBuffer(agent.cfg.buffer_size, spec.state_dim, spec.action_dim, agent.cfg.min_data)
    collector = Collector(agent, env, buffer, seed)
    done = 0
    while done < total_env_steps:
        n = min(chunk, total_env_steps - done)
        yield collector.run(n)
        done += n


@dataclass
class EvalReport:
    mean_return: float
    std_return: float
    mean_policy_queries: float
    mean_routine_length: float
    routine_length_histogram: list[int]
    returns: list[float]
    policy_queries: list[int]


def evaluate(agent: Agent, env: Env, episodes: int, rng: np.random.Generator) -> EvalReport:
    """Eval-mode episodes; one policy query per routine selection."""
    L_max = agent.space.L
    hist = [0] * L_max
    returns, queries, all_lengths = [], [], []
    for _ in range(episodes):
        s = env.reset(int(rng.integers(2**31)))
        total, n_queries, done = 0.0, 0, False
        while not done:
            seq = agent.act(s, "eval")
            n_queries += 1
            executed = 0
            for a in seq.actions:
                res = env.step(a)
                total += res.reward
                executed += 1
                s = res.next_state
                if res.terminal:
                    done = True
                    break
            hist[executed - 1] += 1
            all_lengths.append(executed)
        returns.append(total)
        queries.append(n_queries)
    return EvalReport(
        mean_return=float(np.mean(returns)),
        std_return=float(np.std(returns)),
        mean_policy_queries=float(np.mean(queries)),
        mean_routine_length=float(np.mean(all_lengths)),
        routine_length_histogram=hist,
        returns=returns,
        policy_queries=queries,
    )
