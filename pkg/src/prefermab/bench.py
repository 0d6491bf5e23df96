"""Baselines, experiment suites and result tables.

Every suite cell writes ``<out>/<suite>/<cell>/report.csv`` and
``summary.json``; seeds are aggregated with the interquartile mean.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.stats import trim_mean

from .engine import (Checkpoint, EvalReport, Population, TrainConfig, Trainer, evaluate, finetune,
                     pretrain, run_policy, sample_population)
from .envs import Environment, apply_wasserstein_shift, bernoulli_wasserstein, make_features

log = logging.getLogger(__name__)

SUITES = ("zero_shot_shift", "opt_in_sweep", "unique_arms", "shaping_ablation", "finetune_curve")


def iqm(x) -> float:
    """Interquartile mean (25% trimmed from each end)."""
    x = np.asarray(x, dtype=np.float64)
    return float(trim_mean(x, 0.25)) if len(x) else float("nan")


# ----------------------------------------------------------------- baselines

def no_action_policy(n_actions: int):
    def policy(s, z, xi, rng):
        A = np.zeros((len(s), n_actions), dtype=np.int64)
        A[xi == 1, 0] = 1
        return A

    return policy


def random_policy(costs: np.ndarray, budget: float):
    """Uniform random actions, then random acting arms are downgraded to passive until feasible."""
    costs = np.asarray(costs, dtype=np.float64)

    def policy(s, z, xi, rng):
        n = len(s)
        a = rng.integers(0, len(costs), n)
        a[xi == 0] = 0
        acting = rng.permutation(np.flatnonzero(a))
        spent = costs[a].sum()
        for i in acting:
            if spent <= budget + 1e-12:
                break
            spent -= costs[a[i]]
            a[i] = 0
        A = np.zeros((n, len(costs)), dtype=np.int64)
        A[np.arange(n), a] = 1
        A[xi == 0] = 0
        return A

    return policy


def baseline_no_action(env: Environment, population: Population, trials=50, rounds=10, seed=0,
                       opt_in_rate=1.0) -> EvalReport:
    rep = run_policy(no_action_policy(env.n_actions), env, population, 0.0, opt_in_rate, trials, rounds, seed)
    rep.metadata["policy"] = "no_action"
    return rep


def baseline_random(env: Environment, population: Population, budget: float, trials=50, rounds=10, seed=0,
                    opt_in_rate=1.0) -> EvalReport:
    rep = run_policy(random_policy(env.costs.as_array(), budget), env, population, budget, opt_in_rate,
                     trials, rounds, seed)
    rep.metadata["policy"] = "random"
    return rep


def compare(ckpt: Checkpoint, population: Population, opt_in_rate: float, trials: int, rounds: int,
            seed: int) -> dict:
    """PreFeRMAB and both baselines on one population with shared randomness."""
    env = ckpt.cfg.make_env()
    B = ckpt.cfg.budget
    return {
        "prefermab": evaluate(ckpt, population, opt_in_rate, trials, rounds, seed),
        "random": baseline_random(env, population, B, trials, rounds, seed, opt_in_rate),
        "no_action": baseline_no_action(env, population, trials, rounds, seed, opt_in_rate),
    }


# ----------------------------------------------------------------- suite config

@dataclass
class BenchConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    trials: int = 50
    rounds: int = 10
    eval_seed: int = 1000
    test_seed: int = 500
    eval_opt_in: float = 1.0
    shift: float = 0.0
    deltas: list = field(default_factory=lambda: [0.05, 0.1, 0.15, 0.2, 0.25])
    opt_in_rates: list = field(default_factory=lambda: [0.8, 0.9, 1.0])
    unique_arm_counts: list = field(default_factory=lambda: [21, 45])
    masked: list = field(default_factory=list)
    reward: str = "exponential"
    shaping_estimator: str = "isotonic"
    finetune_epochs: int = 200
    scratch_epochs: int = 200
    eval_trials_curve: int = 50
    smooth: int = 5

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig.from_dict(self.train)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        bad = [k for k in d if k not in known]
        if bad:
            raise KeyError(f"unknown bench key(s): {', '.join(bad)}")
        d = dict(d)
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        return cls(**d)


def held_out_population(cfg: TrainConfig, seed, delta: float = 0.0) -> tuple[Population, dict]:
    """Unseen arms, optionally shifted by ``delta``; returns the population and shift metadata."""
    env = cfg.make_env()
    fmap = cfg.make_feature_map(env)
    rng = np.random.default_rng(seed)
    params = env.sample_params(rng, cfg.capacity)
    meta = {"delta": delta}
    if delta:
        shifted = apply_wasserstein_shift(params, delta)
        w = bernoulli_wasserstein(params, shifted)
        clamped = params + delta > 1.0
        meta.update(achieved_w_unclamped=float(w[~clamped].mean()) if (~clamped).any() else None,
                    achieved_w_unclamped_max_dev=float(np.abs(w[~clamped] - delta).max()) if (~clamped).any() else None,
                    achieved_w_mean=float(w.mean()), clamped_fraction=float(clamped.mean()))
        params = shifted
    feats = make_features(env.param_vector(params), fmap)
    if cfg.mask_features:
        feats[:, list(cfg.mask_features)] = 0.0
    return Population(params, feats, env.initial_states(rng, len(params))), meta


# ----------------------------------------------------------------- cells

def _write_cell(root: Path, name: str, reports: dict, extra: dict) -> dict:
    cell = root / name
    cell.mkdir(parents=True, exist_ok=True)
    with open(cell / "report.csv", "w") as fh:
        fh.write("policy,trial,reward_per_arm\n")
        for pol, rep in reports.items():
            for i, r in enumerate(rep.per_trial):
                fh.write(f"{pol},{i},{float(r)!r}\n")
    summary = {"cell": name, **extra,
               "policies": {pol: rep.summary() for pol, rep in reports.items()}}
    (cell / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
    return summary


def _run_cell(root: Path, name: str, run, extra: dict) -> dict:
    """Evaluate one cell; a failure is recorded as a missing cell instead of aborting the suite."""
    try:
        reports = run()
    except (ValueError, ArithmeticError, AssertionError, RuntimeError) as err:
        log.warning("cell %s failed: %s", name, err)
        cell = root / name
        cell.mkdir(parents=True, exist_ok=True)
        summary = {"cell": name, **extra, "missing": True, "error": str(err), "policies": {}}
        (cell / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
        return summary
    return _write_cell(root, name, reports, extra)


def _pretrain_job(args):
    cfg_dict, = args
    cfg = TrainConfig.from_dict(cfg_dict)
    ckpt = pretrain(cfg)
    manifest, blobs = ckpt.payload()
    return manifest, blobs


def pretrain_seeds(cfg: TrainConfig, seeds, threads: int = 1) -> dict:
    """One checkpoint per seed; with ``threads > 1`` seeds train in worker processes."""
    jobs = [(replace(cfg, seed=int(s)).to_dict(),) for s in seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_pretrain_job, jobs))
    else:
        results = [_pretrain_job(j) for j in jobs]
    return {int(s): Checkpoint.from_payload(*r) for s, r in zip(seeds, results)}


def _provenance(ckpt: Checkpoint, seed) -> dict:
    return {"config_hash": ckpt.cfg.hash(), "seeds": [int(seed)], "checkpoint_hash": ckpt.content_hash()}


def _aggregate(summaries: list[dict], key: str) -> dict:
    groups: dict = {}
    for s in summaries:
        if not s.get("missing"):
            groups.setdefault(s[key], []).append(s)
    out = {}
    for k, rows in groups.items():
        pols = rows[0]["policies"].keys()
        out[str(k)] = {p: iqm([r["policies"][p]["mean"] for r in rows]) for p in pols}
        out[str(k)]["seeds"] = [r["seeds"][0] for r in rows]
    return out


def suite_zero_shot_shift(bc: BenchConfig, root: Path, ckpts=None, threads=1) -> dict:
    ckpts = ckpts or pretrain_seeds(bc.train, bc.seeds, threads)
    cells = []
    for seed, ck in ckpts.items():
        for delta in bc.deltas:
            pop, meta = held_out_population(bc.train, [bc.test_seed, seed], delta)
            cells.append(_run_cell(root, f"delta={delta}_seed={seed}",
                                   lambda: compare(ck, pop, bc.eval_opt_in, bc.trials, bc.rounds, bc.eval_seed + seed),
                                   {"delta": delta, **meta, **_provenance(ck, seed)}))
    return {"cells": cells, "iqm": _aggregate(cells, "delta")}


def suite_opt_in_sweep(bc: BenchConfig, root: Path, ckpts=None, threads=1) -> dict:
    ckpts = ckpts or pretrain_seeds(bc.train, bc.seeds, threads)
    cells = []
    for seed, ck in ckpts.items():
        pop, meta = held_out_population(bc.train, [bc.test_seed, seed], bc.shift)
        for rate in bc.opt_in_rates:
            cells.append(_run_cell(root, f"opt_in={rate}_seed={seed}",
                                   lambda: compare(ck, pop, rate, bc.trials, bc.rounds, bc.eval_seed + seed),
                                   {"opt_in_rate": rate, **meta, **_provenance(ck, seed)}))
    return {"cells": cells, "iqm": _aggregate(cells, "opt_in_rate")}


def suite_unique_arms(bc: BenchConfig, root: Path, threads=1) -> dict:
    cells = []
    for count in bc.unique_arm_counts:
        cfg = replace(bc.train, unique_arms=int(count), mask_features=list(bc.masked))
        ckpts = pretrain_seeds(cfg, bc.seeds, threads)
        for seed, ck in ckpts.items():
            pop, meta = held_out_population(cfg, [bc.test_seed, seed], bc.shift)
            cells.append(_run_cell(root, f"unique={count}_seed={seed}",
                                   lambda: compare(ck, pop, bc.eval_opt_in, bc.trials, bc.rounds, bc.eval_seed + seed),
                                   {"unique_arms": count, "masked": list(bc.masked), **meta,
                                    **_provenance(ck, seed)}))
    return {"cells": cells, "iqm": _aggregate(cells, "unique_arms")}


def suite_shaping_ablation(bc: BenchConfig, root: Path, threads=1) -> dict:
    cells = []
    options = {**bc.train.env_options, "reward": bc.reward}
    for shaping in (bc.shaping_estimator, "none"):
        cfg = replace(bc.train, env_options=options, shaping=shaping)
        ckpts = pretrain_seeds(cfg, bc.seeds, threads)
        for seed, ck in ckpts.items():
            pop, meta = held_out_population(cfg, [bc.test_seed, seed], 0.0)
            cells.append(_run_cell(root, f"shaping={shaping}_seed={seed}",
                                   lambda: compare(ck, pop, bc.eval_opt_in, bc.trials, bc.rounds, bc.eval_seed + seed),
                                   {"shaping": shaping, "reward": bc.reward, **_provenance(ck, seed)}))
    return {"cells": cells, "iqm": _aggregate(cells, "shaping")}


def smooth_curve(values, window: int) -> np.ndarray:
    """Trailing moving average; the first points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    if window <= 1:
        return v
    c = np.cumsum(np.insert(v, 0, 0.0))
    idx = np.arange(1, len(v) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def samples_to_reach(curve: list[dict], level: float, window: int) -> float:
    """Samples per arm at the first point whose smoothed reward reaches ``level``."""
    sm = smooth_curve([r["reward"] for r in curve], window)
    hits = np.flatnonzero(sm >= level - 1e-12)
    return float(curve[hits[0]]["samples_per_arm"]) if len(hits) else float("inf")


def finetune_vs_scratch(bc: BenchConfig, ckpt: Checkpoint, seed: int) -> dict:
    """Fine-tune a pretrained checkpoint and train from scratch on one fixed population."""
    pop, _ = held_out_population(bc.train, [bc.test_seed, seed], bc.shift)
    ft_cfg = replace(bc.train, seed=seed + 10_000)
    _, ft_curve = finetune(ckpt, pop, ft_cfg, bc.finetune_epochs, bc.eval_trials_curve,
                           bc.eval_seed + seed, bc.eval_opt_in)
    scratch = Checkpoint.initial(replace(bc.train, seed=seed + 20_000, n_epochs=bc.scratch_epochs))
    _, sc_curve = finetune(scratch, pop, replace(scratch.cfg), bc.scratch_epochs, bc.eval_trials_curve,
                           bc.eval_seed + seed, bc.eval_opt_in)
    sm = smooth_curve([r["reward"] for r in sc_curve], bc.smooth)
    best = float(sm.max())
    scratch_samples = samples_to_reach(sc_curve, best, bc.smooth)
    ft_samples = samples_to_reach(ft_curve, best, bc.smooth)
    return {"seed": seed, "scratch_best": best, "scratch_samples": scratch_samples,
            "finetune_samples": ft_samples, "ratio": ft_samples / scratch_samples if scratch_samples else 0.0,
            "finetune_curve": ft_curve, "scratch_curve": sc_curve}


def suite_finetune_curve(bc: BenchConfig, root: Path, ckpts=None, threads=1) -> dict:
    ckpts = ckpts or pretrain_seeds(bc.train, bc.seeds, threads)
    rows = []
    for seed, ck in ckpts.items():
        res = finetune_vs_scratch(bc, ck, seed)
        cell = root / f"seed={seed}"
        cell.mkdir(parents=True, exist_ok=True)
        with open(cell / "report.csv", "w") as fh:
            fh.write("run,epoch,samples_per_arm,reward\n")
            for run in ("finetune", "scratch"):
                for r in res[f"{run}_curve"]:
                    fh.write(f"{run},{r['epoch']},{r['samples_per_arm']!r},{r['reward']!r}\n")
        summary = {k: v for k, v in res.items() if not k.endswith("_curve")}
        summary.update(_provenance(ck, seed))
        (cell / "summary.json").write_text(json.dumps(summary, indent=2, default=float))
        rows.append(summary)
    return {"cells": rows, "iqm": {"ratio": iqm([r["ratio"] for r in rows]),
                                   "finetune_samples": iqm([r["finetune_samples"] for r in rows]),
                                   "scratch_samples": iqm([r["scratch_samples"] for r in rows])}}


def run_experiment(suite: str, bc: BenchConfig, out_dir="results", threads: int = 1) -> dict:
    """Run one suite and write its tables under ``out_dir/suite``."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {', '.join(SUITES)}")
    root = Path(out_dir) / suite
    root.mkdir(parents=True, exist_ok=True)
    fn = globals()[f"suite_{suite}"]
    result = fn(bc, root, threads=threads)
    (root / "summary.json").write_text(json.dumps(
        {"suite": suite, "config": bc.to_dict(), "iqm": result["iqm"]}, indent=2, default=float))
    return result


def render_summary(results_dir) -> str:
    """Plain-text tables of the IQM rows of every suite found under ``results_dir``."""
    lines = []
    for path in sorted(Path(results_dir).glob("*/summary.json")):
        data = json.loads(path.read_text())
        lines.append(f"== {data['suite']} ==")
        table = data["iqm"]
        if all(isinstance(v, dict) for v in table.values()):
            cols = [c for c in next(iter(table.values())) if c != "seeds"]
            lines.append("  ".join([f"{'cell':>12}"] + [f"{c:>10}" for c in cols]))
            for key, row in table.items():
                lines.append("  ".join([f"{key:>12}"] + [f"{row[c]:10.3f}" for c in cols]))
        else:
            for key, val in table.items():
                lines.append(f"{key:>18}  {val:10.3f}")
        lines.append("")
    return "\n".join(lines)
