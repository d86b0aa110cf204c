"""Command-line entry points: train, sweep, oracle, eval.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .harness import SweepSpec, evaluate_policy, run_oracle, run_sweep, run_training
from .presets import get_preset
from .schedulers import POLICY_NAMES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load(args) -> tuple:
    if args.config:
        sim, train = load_config(args.config)
    else:
        sim, train = get_preset(args.preset)
    if args.seed is not None:
        sim = dataclasses.replace(sim, seed=args.seed)
    if getattr(args, "episodes", None) is not None:
        train = dataclasses.replace(train, episodes=args.episodes)
    if getattr(args, "steps", None) is not None:
        train = dataclasses.replace(train, steps=args.steps)
    return sim, train


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    parser.add_argument("--preset", default="default",
                        help="named preset used when no config file is given")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", type=Path, default=Path("runs"), help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavmpt",
        description="UAV power-transfer / data-collection scheduling experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train (or just run) one policy")
    _add_common(p_train)
    p_train.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p_train.add_argument("--episodes", type=int)
    p_train.add_argument("--steps", type=int)

    p_sweep = sub.add_parser("sweep", help="train+evaluate a grid of cells")
    _add_common(p_sweep)
    p_sweep.add_argument("--variable", required=True,
                         choices=["num_devices", "queue_capacity", "discount"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated list, e.g. 10,20,40")
    p_sweep.add_argument("--episodes", type=int)
    p_sweep.add_argument("--steps", type=int)
    p_sweep.add_argument("--reps", type=int, default=1, help="seeds per cell")
    p_sweep.add_argument("--eval-episodes", type=int, default=5)
    p_sweep.add_argument("--policies", default="drlsa,rsa,lqsa")
    p_sweep.add_argument("--workers", type=int, default=1)

    p_oracle = sub.add_parser(
        "oracle", help="value iteration vs tabular Q vs DQN on a tiny instance")
    _add_common(p_oracle)
    p_oracle.set_defaults(preset="tiny")

    p_eval = sub.add_parser("eval", help="run a frozen policy and report metrics")
    _add_common(p_eval)
    p_eval.add_argument("--policy", required=True, choices=POLICY_NAMES)
    p_eval.add_argument("--checkpoint", type=Path,
                        help="drlsa parameter checkpoint to evaluate")
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--steps", type=int)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sim, train = _load(args)
        if args.command == "train":
            result = run_training(sim, train, args.policy, args.out)
            print(f"run {result.run_id}: {train.episodes} episodes x {train.steps} steps")
            print(f"  frames : {result.frames_path}")
            print(f"  summary: {result.summary_path}")
            if result.checkpoint_path:
                print(f"  checkpoint: {result.checkpoint_path}")
        elif args.command == "sweep":
            values = [
                float(v) if args.variable == "discount" else int(v)
                for v in args.values.split(",") if v.strip()
            ]
            spec = SweepSpec(
                variable=args.variable, values=tuple(values),
                episodes=args.episodes or train.episodes,
                steps=args.steps or train.steps,
                repetitions=args.reps, eval_episodes=args.eval_episodes,
                policies=tuple(p.strip() for p in args.policies.split(",") if p.strip()),
            )
            summary = run_sweep(spec, sim, train, args.out, workers=args.workers)
            print(f"sweep aggregate: {summary}")
        elif args.command == "oracle":
            report = run_oracle(sim, train, args.out)
            print(report.describe())
        elif args.command == "eval":
            result = evaluate_policy(sim, train, args.policy, out_dir=args.out,
                                     checkpoint=args.checkpoint,
                                     episodes=args.episodes)
            print(f"eval {args.policy}: mean episode cost "
                  f"{result.episode_costs.mean():.3f}, "
                  f"loss rate {result.loss_rate:.4f}, "
                  f"mean velocity {result.mean_velocity:.2f} m/s")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
