"""Command-line front end: run, oracle, validate, demo."""
from __future__ import annotations

import argparse
import importlib.resources
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .environments import environment_from_spec
from .experiment import (
    ConfigError,
    aggregate,
    config_from_dict,
    load_config,
    make_schedule,
    run_experiment,
    write_outputs,
)


def demo_config_dict() -> dict:
    """The bundled short K=4 showcase configuration."""
    text = importlib.resources.files("tanbr").joinpath("demo_config.json").read_text()
    return json.loads(text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tanbr",
        description="Tree-structured neural bandit router experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config")
    run_p.add_argument("--config", required=True, help="path to JSON config")
    run_p.add_argument("--out", default=None, help="output directory override")
    run_p.add_argument(
        "--seed-override",
        type=int,
        default=None,
        help="run a single replication with this seed",
    )
    run_p.add_argument(
        "--parallel", action="store_true", help="run replications in parallel processes"
    )

    oracle_p = sub.add_parser("oracle", help="print the grid-oracle optimum")
    oracle_p.add_argument("--config", required=True, help="path to JSON config")

    val_p = sub.add_parser("validate", help="validate a config file")
    val_p.add_argument("--config", required=True, help="path to JSON config")

    demo_p = sub.add_parser("demo", help="run the bundled K=4 showcase")
    demo_p.add_argument("--out", default=None, help="output directory override")
    return parser


def _print_tables(tables: dict) -> None:
    print("cumulative regret at checkpoints (mean over replications):")
    for row in tables["regret"]:
        mean = row["mean_cum_regret"]
        mean_s = "n/a" if mean is None else f"{mean:10.4f}"
        print(f"  {row['policy']:>10s}  t={row['checkpoint_t']:<6d} regret={mean_s}")
    print("final average reward per task:")
    for row in tables["final_reward"]:
        print(
            f"  {row['policy']:>10s}  task {row['task']}: "
            f"{row['mean_final_reward']:.4f} (+/- {row['std_final_reward']:.4f})"
        )


def _cmd_run(config, out_override, seed_override, parallel_flag) -> int:
    if out_override is not None:
        config = replace(config, out_dir=str(out_override))
    if seed_override is not None:
        config = replace(config, seeds=(seed_override,), replications=1)
    if parallel_flag:
        config = replace(config, parallel=True)
    summaries = run_experiment(config)
    paths = write_outputs(config, summaries, config.out_dir)
    failed = [s for s in summaries if s.error is not None]
    for s in failed:
        print(f"replication failed: {s.policy_id} seed={s.seed}: {s.error}", file=sys.stderr)
    _print_tables(aggregate(summaries))
    print(f"outputs written to {Path(config.out_dir).resolve()}")
    return 1 if failed else 0


def _cmd_oracle(config) -> int:
    env = environment_from_spec(config.environment, max_experts_b=config.tree.max_experts_b)
    if not env.has_oracle:
        print("environment exposes no oracle", file=sys.stderr)
        return 1
    schedule = make_schedule(config.schedule, env.V, config.horizon)
    psi = schedule.psi(1, np.random.default_rng(0))
    x_star, value = env.oracle(psi)
    x_s = ", ".join(f"{xi:.6g}" for xi in x_star)
    print(f"psi = [{', '.join(f'{p:.6g}' for p in psi)}]")
    print(f"x* = [{x_s}]  value = {value:.6g}")
    return 0


def cli(argv=None) -> int:
    """Entry point returning an exit status (argparse usage errors give 2)."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "run":
            return _cmd_run(
                load_config(args.config), args.out, args.seed_override, args.parallel
            )
        if args.command == "oracle":
            return _cmd_oracle(load_config(args.config))
        if args.command == "validate":
            config = load_config(args.config)
            print(
                f"ok: {len(config.policies)} policies, horizon {config.horizon}, "
                f"{config.replications} replications"
            )
            return 0
        if args.command == "demo":
            data = demo_config_dict()
            if args.out is not None:
                data["out_dir"] = str(args.out)
            return _cmd_run(config_from_dict(data), None, None, False)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
