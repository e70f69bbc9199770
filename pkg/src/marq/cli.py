"""Command-line entry point: train, eval, sweep, verify."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .trainer import (
    Trainer,
    TrainerConfig,
    checkpoint_load,
    evaluate,
    load_config,
    run_sweep,
)
from .verify import run_all


def _config_from_args(args) -> TrainerConfig:
    config = load_config(args.config) if args.config else TrainerConfig()
    overrides = {}
    if getattr(args, "env", None):
        overrides["env"] = args.env
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "lam", None) is not None:
        overrides["lam"] = args.lam
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_train(args) -> int:
    config = _config_from_args(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    trainer = Trainer(config, seed)
    rows = trainer.run(out_dir=args.out_dir)
    final = rows[-1] if rows else None
    if final is not None:
        print(
            f"trained {config.variant} on {config.env}: seed {seed}, "
            f"{final.env_steps} env steps, final eval {final.eval_mean:.4f} "
            f"+- {final.eval_std:.4f}"
        )
    return 0


def _cmd_eval(args) -> int:
    trainer = checkpoint_load(args.checkpoint)
    episodes = args.episodes or trainer.config.eval_episodes
    seed = args.seed if args.seed is not None else 0
    mean, std = evaluate(
        trainer.greedy_policy_fn(),
        trainer.eval_env,
        episodes,
        seed,
        dump_path=args.dump_trajectories,
    )
    print(f"eval over {episodes} episodes: mean {mean:.4f} +- {std:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else None
    manifest = run_sweep(config, lambdas, args.out_dir, seeds=seeds)
    failures = [r for r in manifest["runs"] if r["status"] != "ok"]
    print(
        f"sweep finished: {len(manifest['runs'])} runs, "
        f"{len(failures)} failures; manifest at {Path(args.out_dir) / 'sweep_manifest.json'}"
    )
    return 1 if failures else 0


def _cmd_verify(args) -> int:
    results = run_all(quick=args.quick)
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        if not ok:
            failed += 1
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marq",
        description="Regularized independent distributional Q-learning for cooperative agents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training job")
    train.add_argument("--config", type=str, default=None, help="YAML config path")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--env", type=str, default=None)
    train.add_argument("--variant", type=str, default=None)
    train.add_argument("--lambda", dest="lam", type=float, default=None)
    train.add_argument("--out-dir", type=str, default=None)
    train.set_defaults(func=_cmd_train)

    evl = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    evl.add_argument("--checkpoint", type=str, required=True)
    evl.add_argument("--episodes", type=int, default=None)
    evl.add_argument("--seed", type=int, default=None)
    evl.add_argument("--dump-trajectories", type=str, default=None)
    evl.set_defaults(func=_cmd_eval)

    sweep = sub.add_parser("sweep", help="run the lambda ablation sweep")
    sweep.add_argument("--config", type=str, default=None)
    sweep.add_argument("--lambdas", type=str, default="0.1,1,10")
    sweep.add_argument("--seeds", type=str, default=None)
    sweep.add_argument("--env", type=str, default=None)
    sweep.add_argument("--variant", type=str, default=None)
    sweep.add_argument("--out-dir", type=str, required=True)
    sweep.set_defaults(func=_cmd_sweep)

    ver = sub.add_parser("verify", help="run oracle and property checks")
    ver.add_argument("--quick", action="store_true")
    ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
