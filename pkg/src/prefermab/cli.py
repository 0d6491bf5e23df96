"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 training divergence.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, config, kernels
from .bench import SUITES, BenchConfig, render_summary, run_experiment, held_out_population
from .core import RmabInstance
from .engine import Checkpoint, Population, TrainConfig, TrainingDivergenceError, evaluate, finetune, pretrain
from .oracle import arm_dynamics, lambda_star, objective_curve, value_iteration

log = logging.getLogger("prefermab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(args) -> int | None:
    env = os.environ.get("PREFERMAB_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise config.ConfigError(f"PREFERMAB_SEED must be an integer, got {env!r}") from None
    return args.seed


def _load_configs(path) -> tuple[TrainConfig, BenchConfig]:
    if path is None:
        return config.loads("")
    return config.load(path)


def _write_run(out: Path, command: str, train: TrainConfig, bench: BenchConfig | None = None, **extra):
    out.mkdir(parents=True, exist_ok=True)
    info = {
        "command": command,
        "config": config.to_dict(train, bench),
        "seed": train.seed,
        "versions": {"prefermab": __version__, "numpy": np.__version__, "python": platform.python_version(),
                     "kernels": kernels.BACKEND},
        **extra,
    }
    (out / "run.json").write_text(json.dumps(info, indent=2, default=float))


def load_population(path) -> Population:
    """Arms from an instance file (``{"arms": [...]}``) or a bare list of arms."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, list):
        doc = {"capacity": max(len(doc), 1), "budget": 0.0, "discount": 0.0, "costs": [0, 1], "arms": doc}
    if "capacity" in doc:
        inst = RmabInstance.from_dict(doc)
        return Population.from_arms(inst.arms)
    raise KeyError("population file must contain an arm list")


def cmd_pretrain(args) -> int:
    train, _ = _load_configs(args.config)
    seed = _seed(args)
    if seed is not None:
        train = replace(train, seed=seed)
    ckpt = pretrain(train)
    digest = ckpt.save(args.out)
    _write_run(Path(args.out), "pretrain", train, checkpoint_hash=digest)
    print(digest)
    return 0


def cmd_evaluate(args) -> int:
    if args.trials < 1:
        raise config.ConfigError("trials must be >= 1")
    if args.rounds < 1:
        raise config.ConfigError("rounds must be >= 1")
    ckpt = Checkpoint.load(args.model)
    pop = load_population(args.population)
    seed = _seed(args) or 0
    rep = evaluate(ckpt, pop, args.opt_in_rate, args.trials, args.rounds, seed, args.budget)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_csv(out / "report.csv")
        rep.to_json(out / "summary.json")
        _write_run(out, "evaluate", ckpt.cfg, checkpoint_hash=ckpt.content_hash(), report=rep.summary())
    print(json.dumps(rep.summary(), default=float))
    return 0


def cmd_finetune(args) -> int:
    ckpt = Checkpoint.load(args.model)
    train = ckpt.cfg
    if args.config:
        train, _ = config.load(args.config)
    seed = _seed(args)
    if seed is not None:
        train = replace(train, seed=seed)
    pop = load_population(args.population)
    ckpt, curve = finetune(ckpt, pop, train, args.epochs, args.eval_trials)
    out = Path(args.out)
    digest = ckpt.save(out)
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "samples_per_arm", "reward"])
        w.writeheader()
        w.writerows(curve)
    _write_run(out, "finetune", train, checkpoint_hash=digest)
    print(digest)
    return 0


def cmd_bench(args) -> int:
    train, bench = _load_configs(args.config)
    seed = _seed(args)
    if seed is not None:
        bench = replace(bench, seeds=[seed])
    result = run_experiment(args.suite, bench, args.out, args.threads)
    _write_run(Path(args.out) / args.suite, "bench", train, bench)
    print(json.dumps(result["iqm"], indent=2, default=float))
    return 0


def cmd_oracle(args) -> int:
    inst = RmabInstance.load(args.instance)
    lam = lambda_star(inst, args.lambda_max, args.steps, args.reward_timing)
    result = {"lambda_star": lam, "reward_timing": args.reward_timing}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        grid, vals = objective_curve(inst, args.lambda_max, args.steps, args.reward_timing)
        with open(out / "objective.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "objective"])
            w.writerows(zip(grid.tolist(), vals.tolist()))
        with open(out / "q_tables.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "state", "action", "q"])
            for i, (T, R, _) in enumerate(arm_dynamics(inst)):
                Q = value_iteration(T, R, inst.costs, lam, inst.discount, reward_timing=args.reward_timing)
                for s in range(Q.shape[0]):
                    for a in range(Q.shape[1]):
                        w.writerow([i, s, a, repr(float(Q[s, a]))])
        (out / "lambda_star.json").write_text(json.dumps(result, indent=2))
    print(json.dumps(result))
    return 0


def cmd_summary(args) -> int:
    text = render_summary(args.results)
    if not text:
        raise config.ConfigError(f"no suite summaries under {args.results}")
    print(text)
    return 0


def cmd_population(args) -> int:
    train, _ = _load_configs(args.config)
    train = replace(train, capacity=args.n)
    pop, meta = held_out_population(train, args.seed, args.shift)
    env = train.make_env()
    inst = RmabInstance(len(pop), min(train.budget, len(pop) * env.costs.max), train.discount, env.costs,
                        train.n_steps, pop.to_arms(env), train.env_options)
    inst.save(args.out)
    print(json.dumps(meta))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="prefermab", description="Pretrained streaming RMAB policies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pretrain", help="train a model on sampled arms")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("evaluate", help="zero-shot evaluation on a population")
    s.add_argument("--model", required=True)
    s.add_argument("--population", required=True)
    s.add_argument("--opt-in-rate", type=float, default=1.0)
    s.add_argument("--trials", type=int, default=50)
    s.add_argument("--rounds", type=int, default=10)
    s.add_argument("--budget", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_evaluate)

    s = sub.add_parser("finetune", help="continue training on a fixed population")
    s.add_argument("--model", required=True)
    s.add_argument("--population", required=True)
    s.add_argument("--config")
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--eval-trials", type=int, default=20)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_finetune)

    s = sub.add_parser("bench", help="run an experiment suite")
    s.add_argument("--suite", required=True, choices=SUITES)
    s.add_argument("--config")
    s.add_argument("--out", default="results")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("oracle", help="exact lambda* for a small discrete instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--lambda-max", type=float, default=20.0)
    s.add_argument("--steps", type=int, default=2001)
    s.add_argument("--reward-timing", choices=("current", "next"), default="current")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_oracle)

    s = sub.add_parser("summary", help="print suite tables")
    s.add_argument("--results", default="results")
    s.set_defaults(fn=cmd_summary)

    s = sub.add_parser("population", help="sample a test population as an instance file")
    s.add_argument("--config")
    s.add_argument("--n", type=int, default=21)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shift", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_population)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except TrainingDivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return 2
    except (config.ConfigError, KeyError, ValueError, FileNotFoundError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
