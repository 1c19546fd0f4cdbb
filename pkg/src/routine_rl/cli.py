"""Command-line entry point: ``routine-rl <subcommand> ...``.

Exit codes: 0 on success, 2 for configuration or usage errors, 3 for runtime
failures.  Errors are reported as one line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import harness
from .config import load_config
from .errors import ConfigError, UsageError
from .plotting import plot_learning_curves

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    """argparse reports bad arguments as config errors instead of exiting by itself."""

    def error(self, message):
        raise ConfigError(message)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = harness.run(cfg, args.output, workers=args.workers)
    pooled = result.summary["pooled"]
    print(f"{result.metrics_csv}: return {pooled['mean_return']['mean']:.2f} "
          f"+- {pooled['mean_return']['std']:.2f}, policy queries {pooled['mean_policy_queries']['mean']:.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    report = harness.evaluate_checkpoint(args.checkpoint, args.env, args.episodes, args.seed)
    print(json.dumps({
        "mean_return": report.mean_return,
        "std_return": report.std_return,
        "mean_policy_queries": report.mean_policy_queries,
        "mean_routine_length": report.mean_routine_length,
        "routine_length_histogram": report.routine_length_histogram,
    }, indent=2))
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    results = harness.ablate(cfg, args.suite, args.output, workers=args.workers)
    for name, r in results.items():
        pooled = r.summary["pooled"]
        print(f"{name}: return {pooled['mean_return']['mean']:.2f}, "
              f"policy queries {pooled['mean_policy_queries']['mean']:.1f}")
    return EXIT_OK


def cmd_explore_hist(args) -> int:
    res = harness.explore_hist(args.env, args.L, args.samples, args.bins, args.seed, args.output)
    for name, c in res.counts.items():
        print(f"{name}: {int(c.sum())} states, {int((c > 0).sum())}/{len(c)} bins visited")
    print(res.csv_path)
    return EXIT_OK


def cmd_plot(args) -> int:
    plot_learning_curves(args.csv, args.out)
    print(args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="routine-rl", description="Routine-space reinforcement learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train every seed of a config")
    t.add_argument("config")
    t.add_argument("--output", help="override the config's output directory")
    t.add_argument("--workers", type=int, default=1, help="seeds trained in parallel")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("env")
    e.add_argument("--episodes", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation suite")
    a.add_argument("config")
    a.add_argument("--suite", required=True, help=", ".join(harness.ABLATION_SUITES))
    a.add_argument("--output")
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    x = sub.add_parser("explore-hist", help="exploration coverage of random actions vs random routines")
    x.add_argument("env")
    x.add_argument("--L", type=int, required=True)
    x.add_argument("--samples", type=int, default=10, help="episodes per sampler")
    x.add_argument("--bins", type=int, default=20)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--output", default=".")
    x.set_defaults(func=cmd_explore_hist)

    pl = sub.add_parser("plot", help="learning curves from metrics CSVs")
    pl.add_argument("csv", nargs="*")
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=cmd_plot)
    return p


def _one_line(exc: BaseException) -> str:
    text = " ".join(str(exc).split()) or type(exc).__name__
    return f"routine-rl: error: {text}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s: %(message)s")
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(_one_line(exc), file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("routine-rl: interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(_one_line(exc), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
