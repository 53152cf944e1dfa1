"""Command-line entry point: train, eval, compare, sweep.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric
failure. The default output root is taken from $SLACKSAC_OUT when --out is
absent from both the flags and the config file.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import json
import os
import sys

from .checkpoint import load_agent
from .config import CONDITIONS, RunConfig, attack_config, load_config
from .envs import AttackConfig, make_env
from .evaluation import (
    metric_values,
    read_eval_csv,
    retained_return_ratio,
    run_eval,
    summarize,
    write_eval_csv,
)
from .nn import ConfigurationError, StateError
from .stats import mann_whitney_u, summarize_values
from .training import CHECKPOINT_NAME, train_run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

SUMMARY_SCHEMA = "slacksac/summary/v1"
COMPARE_SCHEMA = "slacksac/compare/v1"
ATTACK_SEED_OFFSET = 7919  # keeps the attack stream apart from episode seeds


def _ints(text: str):
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("--env", help="environment name")
    p.add_argument("--condition", choices=CONDITIONS)
    p.add_argument("--episodes", type=int, help="training episodes per run")
    p.add_argument("--seeds", type=_ints, help="seed list, e.g. '0 1 2'")
    p.add_argument("--out", dest="out_dir", help="output directory")
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    p.add_argument("--hidden", type=_ints, help="hidden layer widths, e.g. '100 100'")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--gamma", type=float)
    p.add_argument("--epsilon", type=float, help="slack band width")
    p.add_argument("--h-star", type=float, dest="custom_h_star", help="entropy bound for condition=custom")
    p.add_argument("--entropy-mode", dest="custom_entropy_mode", choices=("conventional", "slack"))
    p.add_argument("--policy-kind", dest="policy_kind", choices=("student_t", "gaussian"))
    p.add_argument("--attack-probability", type=float, dest="attack_probability")
    p.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    p.add_argument(
        "--no-buffer-dump",
        action="store_const",
        const=False,
        dest="dump_buffer",
        help="exclude the replay buffer from checkpoints",
    )


_CONFIG_FIELDS = (
    "env",
    "condition",
    "episodes",
    "seeds",
    "out_dir",
    "checkpoint_every",
    "hidden",
    "learning_rate",
    "gamma",
    "epsilon",
    "custom_h_star",
    "custom_entropy_mode",
    "policy_kind",
    "attack_probability",
    "eval_episodes",
    "dump_buffer",
)


def config_from_args(args) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FIELDS}
    return load_config(args.config, overrides)


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    config = config_from_args(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    rows = train_run(config, seed, config.out_dir)
    print(f"trained {config.env} condition={config.condition} seed={seed} "
          f"episodes={len(rows)} out={config.out_dir}")
    return EXIT_OK


def _sweep_one(payload):
    config, seed, out_dir = payload
    train_run(config, seed, out_dir)
    return out_dir


def cmd_sweep(args) -> int:
    config = config_from_args(args)
    conditions = args.conditions.split(",") if args.conditions else [config.condition]
    jobs = []
    for condition in conditions:
        if condition not in CONDITIONS:
            raise ConfigurationError(f"unknown condition {condition!r} in --conditions")
        per = dataclasses.replace(config, condition=condition)
        for seed in config.seeds:
            out_dir = os.path.join(config.out_dir, condition, f"seed{seed:03d}")
            jobs.append((per, seed, out_dir))
    if args.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.workers) as pool:
            for out_dir in pool.map(_sweep_one, jobs):
                print(f"finished {out_dir}")
    else:
        for job in jobs:
            print(f"finished {_sweep_one(job)}")
    print(f"sweep complete: {len(jobs)} runs under {config.out_dir}")
    return EXIT_OK


def _resolve_checkpoint(args):
    if args.checkpoint:
        path = args.checkpoint
    else:
        path = os.path.join(args.run_dir, CHECKPOINT_NAME)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def cmd_eval(args) -> int:
    path = _resolve_checkpoint(args)
    agent, _, _, meta = load_agent(path)
    extra = meta.get("extra", {})
    env_name = args.env or extra.get("env")
    if not env_name:
        raise ConfigurationError("checkpoint does not record an env; pass --env")
    probability = args.attack_probability if args.attack_probability is not None else 0.2
    amplitude = args.attack_amplitude

    def evaluate(p, tag):
        return run_eval(
            agent,
            make_env(env_name),
            AttackConfig(p, rng_seed=args.base_seed + ATTACK_SEED_OFFSET, amplitude=amplitude),
            args.episodes,
            deterministic=not args.sampled,
            base_seed=args.base_seed,
            condition_tag=tag,
            sample_seed=args.base_seed + 1,
        )

    records = evaluate(0.0, "clean")
    if probability > 0.0:
        records += evaluate(probability, "attacked")

    out_dir = args.out_dir or args.run_dir or os.path.dirname(path) or "."
    os.makedirs(out_dir, exist_ok=True)
    write_eval_csv(os.path.join(out_dir, "eval.csv"), records)
    payload = {
        "schema": SUMMARY_SCHEMA,
        "checkpoint": path,
        "env": env_name,
        "condition": extra.get("condition"),
        "n_episodes": args.episodes,
        "deterministic": not args.sampled,
        "attack": {"probability": probability, "amplitude": amplitude},
        "conditions": summarize(records) if records else {},
    }
    if probability > 0.0 and args.episodes > 0:
        clean = [r for r in records if r.condition_tag == "clean"]
        attacked = [r for r in records if r.condition_tag == "attacked"]
        test = mann_whitney_u(
            metric_values(attacked, "episode_return"),
            metric_values(clean, "episode_return"),
            "less",
        )
        payload["pairwise"] = {"return_attacked_lt_clean": dataclasses.asdict(test)}
        payload["retained_return_ratio"] = retained_return_ratio(
            float(metric_values(clean, "episode_return").mean()),
            float(metric_values(attacked, "episode_return").mean()),
        )
    _write_json(os.path.join(out_dir, "summary.json"), payload)
    print(f"evaluated {len(records)} episodes -> {out_dir}/eval.csv, {out_dir}/summary.json")
    return EXIT_OK


def _side_report(path, values):
    stats = summarize_values(values)
    return {"path": path, "n": stats["n"], "mean": stats["mean"], "median": stats["median"]}


def cmd_compare(args) -> int:
    reports = []
    sides = []
    for run_dir in (args.dir_a, args.dir_b):
        path = os.path.join(run_dir, "eval.csv")
        if not os.path.isfile(path):
            raise FileNotFoundError(f"eval.csv not found in {run_dir}")
        records = read_eval_csv(path)
        if args.tag:
            records = [r for r in records if r.condition_tag == args.tag]
        if not records:
            raise ConfigurationError(f"no records with tag {args.tag!r} in {path}")
        values = metric_values(records, args.metric)
        sides.append(values)
        reports.append(_side_report(path, values))
    test = mann_whitney_u(sides[0], sides[1], args.alternative)
    payload = {
        "schema": COMPARE_SCHEMA,
        "metric": args.metric,
        "alternative": args.alternative,
        "tag": args.tag or "all",
        "a": reports[0],
        "b": reports[1],
        "test": dataclasses.asdict(test),
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out_file:
        _write_json(args.out_file, payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slacksac",
        description="Maximum-entropy actor-critic training with a slack entropy constraint.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one run")
    _add_config_flags(p_train)
    p_train.add_argument("--seed", type=int, help="overrides the first configured seed")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="train all configured seeds, optionally several conditions")
    _add_config_flags(p_sweep)
    p_sweep.add_argument("--conditions", help="comma-separated condition list")
    p_sweep.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint with and without attack")
    p_eval.add_argument("run_dir", nargs="?", help="run directory containing checkpoint.ckpt")
    p_eval.add_argument("--checkpoint", help="explicit checkpoint path")
    p_eval.add_argument("--env", help="override the env recorded in the checkpoint")
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--attack-probability", type=float, dest="attack_probability")
    p_eval.add_argument("--attack-amplitude", type=float, dest="attack_amplitude", default=0.2)
    p_eval.add_argument("--sampled", action="store_true", help="sample actions instead of the mode")
    p_eval.add_argument("--base-seed", type=int, dest="base_seed", default=0)
    p_eval.add_argument("--out", dest="out_dir", help="output directory (default: run dir)")
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="rank-sum test between two eval.csv files")
    p_cmp.add_argument("dir_a")
    p_cmp.add_argument("dir_b")
    p_cmp.add_argument("--metric", default="episode_return")
    p_cmp.add_argument("--alternative", choices=("less", "greater"), default="greater")
    p_cmp.add_argument("--tag", help="restrict to one condition tag, e.g. attacked")
    p_cmp.add_argument("--out-file", dest="out_file", help="also write the report to this path")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (StateError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
