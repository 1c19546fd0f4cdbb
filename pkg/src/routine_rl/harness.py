"""Experiment orchestration: seeded training runs, ablation grids and exploration histograms.

Output layout of one run directory::

    config.txt              resolved configuration
    metrics_seed<k>.csv     per-seed rows, appended after every epoch
    metrics.csv             all seeds, written once every seed has finished
    summary.json            per-seed and pooled statistics over the last epochs
    checkpoint_seed<k>.npz  final agent weights
    curves.svg              return and policy-query learning curves
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import Collector, EvalReport, evaluate, load_agent, make_agent
from .buffer import ReplayBuffer
from .config import ExperimentConfig, dump_config
from .envs import make_env
from .errors import ConfigError
from .models import RoutineDecoder, RoutineSpaceSpec, decode_sample
from .plotting import plot_histograms, plot_learning_curves, read_metrics

log = logging.getLogger(__name__)

CSV_HEADER = ("seed", "epoch", "env_steps", "mean_return", "std_return", "mean_policy_queries",
              "mean_routine_length", "j_q", "j_pi", "j_mto", "j_lc", "alpha")
SUMMARY_METRICS = ("mean_return", "mean_policy_queries", "mean_routine_length")
SUMMARY_EPOCHS = 10

ABLATION_SUITES: dict[str, list[tuple[str, dict]]] = {
    "replan": [("base", {}), ("replan", {"replan_mode": True})],
    "no_routine_noise": [("base", {}), ("no_routine_noise", {"disable_routine_noise": True})],
    "no_action_noise": [("base", {}), ("no_action_noise", {"disable_action_noise": True})],
    "length_sweep": [(f"L{n}", {"L": n}) for n in (2, 4, 8, 16)],
}


@dataclass
class RunResult:
    output: Path
    rows: list[dict[str, float]]
    summary: dict
    metrics_csv: Path
    figure: Path | None = None
    checkpoints: list[Path] = field(default_factory=list)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _mean_or_nan(values) -> float:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else math.nan


def epoch_row(seed: int, epoch: int, env_steps: int, report: EvalReport, losses) -> dict:
    alphas = [b.alpha for b in losses if b.alpha is not None]
    return {
        "seed": seed, "epoch": epoch, "env_steps": env_steps,
        "mean_return": report.mean_return, "std_return": report.std_return,
        "mean_policy_queries": report.mean_policy_queries,
        "mean_routine_length": report.mean_routine_length,
        "j_q": _mean_or_nan(b.j_q for b in losses),
        "j_pi": _mean_or_nan(b.j_pi for b in losses),
        "j_mto": _mean_or_nan(b.j_mto for b in losses),
        "j_lc": _mean_or_nan(b.j_lc for b in losses),
        "alpha": float(alphas[-1]) if alphas else math.nan,
    }


def run_seed(config: ExperimentConfig, seed: int, output) -> Path:
    """Train one seed, evaluating at every epoch end; returns the per-seed CSV path."""
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    env, eval_env = make_env(config.env), make_env(config.env)
    spec = env.spec()
    agent = make_agent(config.agent, spec, seed)
    buffer = ReplayBuffer(config.agent.buffer_size, spec.state_dim, spec.action_dim, config.agent.min_data)
    collector = Collector(agent, env, buffer, seed)
    eval_rng = np.random.default_rng([seed, 2])
    path = out / f"metrics_seed{seed}.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        fh.flush()
        for epoch in range(1, config.epochs + 1):
            stats = collector.run(config.steps_per_epoch)
            report = evaluate(agent, eval_env, config.eval_episodes, eval_rng)
            row = epoch_row(seed, epoch, collector.total_steps, report, stats.losses)
            writer.writerow([_fmt(row[k]) for k in CSV_HEADER])
            fh.flush()
            log.info("seed %d epoch %d/%d: return %.2f, queries %.1f", seed, epoch, config.epochs,
                     report.mean_return, report.mean_policy_queries)
    agent.save(out / f"checkpoint_seed{seed}.npz")
    return path


def _stats(values: list[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def summarize(rows: list[dict[str, float]], last: int = SUMMARY_EPOCHS) -> dict:
    """Mean and std of each summary metric over the final ``last`` epochs, per seed and pooled."""
    seeds = sorted({int(r["seed"]) for r in rows})
    per_seed, pooled = {}, {m: [] for m in SUMMARY_METRICS}
    for s in seeds:
        mine = sorted((r for r in rows if int(r["seed"]) == s), key=lambda r: r["epoch"])[-last:]
        per_seed[str(s)] = {m: _stats([r[m] for r in mine]) for m in SUMMARY_METRICS}
        for m in SUMMARY_METRICS:
            pooled[m].extend(r[m] for r in mine)
    return {
        "last_epochs": last,
        "seeds": per_seed,
        "pooled": {m: _stats(v) for m, v in pooled.items()},
        "seed_means": {m: _stats([per_seed[str(s)][m]["mean"] for s in seeds]) for m in SUMMARY_METRICS},
    }


def _write_combined(paths: list[Path], out: Path) -> Path:
    combined = out / "metrics.csv"
    with open(combined, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for p in paths:
            lines = p.read_text().splitlines(keepends=True)
            fh.writelines(lines[1:])
    return combined


def run(config: ExperimentConfig, output=None, workers: int = 1, plot: bool = True) -> RunResult:
    """Train every seed of ``config`` and write metrics, summary, checkpoints and curves."""
    out = Path(output or config.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(config))
    if workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds,
                                  [out] * len(config.seeds)))
    else:
        paths = [run_seed(config, seed, out) for seed in config.seeds]
    combined = _write_combined(paths, out)
    rows = read_metrics(combined)
    summary = {"env": config.env, "algorithm": config.agent.algorithm, "L": config.agent.L}
    summary.update(summarize(rows))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    figure = None
    if plot:
        figure = out / "curves.svg"
        plot_learning_curves([combined], figure)
    return RunResult(out, rows, summary, combined, figure,
                     [out / f"checkpoint_seed{s}.npz" for s in config.seeds])


def ablate(config: ExperimentConfig, suite: str, output=None, workers: int = 1) -> dict[str, RunResult]:
    """Run every variant of an ablation suite in ``<output>/<suite>/<variant>``."""
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; choose from {sorted(ABLATION_SUITES)}")
    if not config.agent.is_routine:
        raise ConfigError(f"ablations need a routine algorithm, got {config.agent.algorithm!r}")
    root = Path(output or config.output) / suite
    results = {}
    for name, changes in ABLATION_SUITES[suite]:
        variant = config.with_agent(**changes)
        results[name] = run(variant, root / name, workers=workers)
    plot_learning_curves([r.metrics_csv for r in results.values()], root / "curves.svg")
    table = {name: r.summary for name, r in results.items()}
    (root / "summary.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    return results


def evaluate_checkpoint(path, env_id: str, episodes: int = 5, seed: int = 0) -> EvalReport:
    agent = load_agent(path)
    env = make_env(env_id)
    spec, trained = env.spec(), agent.env_spec
    if (spec.state_dim, spec.action_dim) != (trained.state_dim, trained.action_dim):
        raise ConfigError(f"checkpoint was trained on {trained.name} (state {trained.state_dim}, "
                          f"action {trained.action_dim}); {env_id} has state {spec.state_dim}, "
                          f"action {spec.action_dim}")
    if episodes < 1:
        raise ConfigError(f"episodes must be >= 1, got {episodes}")
    return evaluate(agent, env, episodes, np.random.default_rng([seed, 2]))


# ---------------------------------------------------------------------------
# exploration coverage

@dataclass
class ExploreHistResult:
    edges: np.ndarray
    counts: dict[str, np.ndarray]
    features: dict[str, np.ndarray]
    csv_path: Path | None = None
    figure: Path | None = None


def _rollout_features(env, episode_seeds, next_sequence) -> np.ndarray:
    feats = []
    for ep_seed in episode_seeds:
        env.reset(int(ep_seed))
        done, queue = False, []
        while not done:
            if not queue:
                queue = list(next_sequence())
            res = env.step(queue.pop(0))
            feats.append(res.diagnostic)
            done = res.terminal
    return np.asarray(feats)


def explore_hist(env_id: str, L: int, samples: int = 10, bins: int = 20, seed: int = 0,
                 output=None) -> ExploreHistResult:
    """Visited-state feature histograms of uniform action noise vs uniform routines.

    Both samplers play ``samples`` episodes from the same initial states.  The
    routine sampler draws n ~ U[-1, 1]^|n|, decodes it with an untrained
    decoder (threshold length, mean actions) and executes it open loop.
    """
    if L < 1 or samples < 1 or bins < 1:
        raise ConfigError(f"explore-hist needs L, samples and bins >= 1, got {L}, {samples}, {bins}")
    env = make_env(env_id)
    a_dim = env.spec().action_dim
    space = RoutineSpaceSpec(L, a_dim)
    decoder = RoutineDecoder(space, np.random.default_rng([seed, 4]))
    episode_seeds = np.random.default_rng([seed, 3]).integers(2**31, size=samples)
    act_rng, rou_rng = np.random.default_rng([seed, 5]), np.random.default_rng([seed, 6])

    def random_action():
        return act_rng.uniform(-1.0, 1.0, size=(1, a_dim))

    def random_routine():
        n = rou_rng.uniform(-1.0, 1.0, size=(1, space.routine_dim))
        return decode_sample(decoder(n), mode="deterministic").actions

    features = {"action": _rollout_features(env, episode_seeds, random_action),
                "routine": _rollout_features(env, episode_seeds, random_routine)}
    top = max(float(f.max()) for f in features.values())
    edges = np.linspace(0.0, top if top > 0 else 1.0, bins + 1)
    counts = {k: np.histogram(f, bins=edges)[0] for k, f in features.items()}
    result = ExploreHistResult(edges, counts, features)
    if output is not None:
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        result.csv_path = out / f"explore_hist_{env_id}_L{L}.csv"
        with open(result.csv_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_low", "bin_high", "action_count", "routine_count"])
            for i in range(bins):
                writer.writerow([_fmt(edges[i]), _fmt(edges[i + 1]),
                                 int(counts["action"][i]), int(counts["routine"][i])])
        result.figure = plot_histograms(edges, counts, out / f"explore_hist_{env_id}_L{L}.svg")
    return result
