"""Training loop, budgeted inference, evaluation and fine-tuning."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import kernels
from .agent import Agent, PpoConfig, TrainingDivergenceError, arm_inputs, entropy_coeff, lambda_inputs
from .core import ActionCosts, ArmModel, TransitionBuffer, admit_requests, sample_opt_ins
from .envs import Environment, FeatureMap, make_env, make_feature_map, make_features
from .shaping import ShapingModel

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig", "Trainer", "Checkpoint", "EvalReport", "Population", "TrainingDivergenceError",
    "pretrain", "evaluate", "finetune", "greedy_proba", "run_policy", "sample_population",
]


@dataclass
class TrainConfig:
    env: str = "synthetic"
    env_options: dict = field(default_factory=dict)
    feature_map: str = "linear"
    feature_seed: int = 0
    mask_features: list = field(default_factory=list)
    capacity: int = 21
    budget: float = 7.0
    discount: float = 0.9
    training_opt_in_rate: float = 0.8
    n_epochs: int = 100
    n_steps: int = 10
    K: int | None = None
    seed: int = 0
    reset: str = "uniform"
    unique_arms: int = 0
    shaping: str = "none"
    shaping_k: int = 5
    budget_horizon: str = "truncated"
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        if isinstance(self.ppo, dict):
            self.ppo = PpoConfig(**self.ppo)
        if self.K is None:
            # the lambda-update period is the table's n_subepochs unless set explicitly
            self.K = self.ppo.n_subepochs
        self.validate()

    def validate(self):
        if self.n_epochs < 0 or self.n_steps < 1:
            raise ValueError("n_epochs must be >= 0 and n_steps >= 1")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if 0 < self.n_epochs < self.ppo.lambda_freeze_epochs:
            log.warning("n_epochs=%d ends inside the %d-epoch lambda freeze window; lambda stays at its initial value",
                        self.n_epochs, self.ppo.lambda_freeze_epochs)
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= self.training_opt_in_rate <= 1.0:
            raise ValueError("training_opt_in_rate must lie in [0, 1]")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.reset not in ("uniform", "continue", "fixed"):
            raise ValueError(f"unknown reset mode {self.reset!r}")
        if self.shaping not in ("none", "isotonic", "knn"):
            raise ValueError(f"unknown shaping estimator {self.shaping!r}")
        if self.budget_horizon not in ("truncated", "infinite"):
            raise ValueError(f"unknown budget_horizon {self.budget_horizon!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ppo"] = self.ppo.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        bad = [k for k in d if k not in known]
        if bad:
            raise KeyError(f"unknown config key(s): {', '.join(bad)}")
        d = dict(d)
        if "ppo" in d:
            ppo_known = {f.name for f in fields(PpoConfig)}
            bad = [k for k in d["ppo"] if k not in ppo_known]
            if bad:
                raise KeyError(f"unknown ppo key(s): {', '.join(bad)}")
            d["ppo"] = PpoConfig(**d["ppo"])
        return cls(**d)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def make_env(self) -> Environment:
        return make_env(self.env, **self.env_options)

    def make_feature_map(self, env: Environment) -> FeatureMap:
        return make_feature_map(self.feature_map, env.n_params, self.feature_seed)

    def budget_term(self) -> float:
        """Budget side of the lambda rule, discounted over one epoch window."""
        b = self.discount
        if self.budget_horizon == "infinite":
            return self.budget / (1.0 - b)
        return self.budget * (1.0 - b ** self.n_steps) / (1.0 - b)


@dataclass
class Population:
    """A fixed set of arms: dynamics parameters, features and starting states."""

    params: np.ndarray
    features: np.ndarray
    states: np.ndarray | None = None

    def __len__(self):
        return len(self.params)

    @classmethod
    def from_arms(cls, arms: list[ArmModel]) -> "Population":
        live = [a for a in arms if not a.dummy]
        return cls(np.stack([a.params for a in live]), np.stack([a.feature for a in live]),
                   np.array([a.state for a in live]))

    def to_arms(self, env: Environment) -> list[ArmModel]:
        states = self.states if self.states is not None else np.zeros(len(self))
        return [ArmModel(env.name, p, f, float(s), env.reward_tag)
                for p, f, s in zip(self.params, self.features, states)]


def sample_population(env: Environment, fmap: FeatureMap, n: int, seed, mask=()) -> Population:
    rng = np.random.default_rng(seed)
    params = env.sample_params(rng, n)
    feats = make_features(env.param_vector(params), fmap)
    if len(mask):
        feats[:, list(mask)] = 0.0
    return Population(params, feats, env.initial_states(rng, n))


def epoch_rng(seed, epoch: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(epoch), int(stream)])


# ----------------------------------------------------------------- checkpoints

class Checkpoint:
    """Agent, shaping model and config bundled as one directory."""

    def __init__(self, agent: Agent, shaping: ShapingModel, cfg: TrainConfig, meta: dict | None = None):
        self.agent = agent
        self.shaping = shaping
        self.cfg = cfg
        self.meta = meta or {}

    @classmethod
    def initial(cls, cfg: TrainConfig) -> "Checkpoint":
        env = cfg.make_env()
        rng = np.random.default_rng([int(cfg.seed), 2**31 - 1])
        agent = Agent(cfg.capacity, env.n_params, env.n_actions, cfg.ppo, rng=rng)
        enabled = cfg.shaping != "none" and not env.discrete
        shaping = ShapingModel(cfg.shaping if cfg.shaping != "none" else "isotonic", cfg.shaping_k, enabled)
        return cls(agent, shaping, cfg, {"epochs_trained": 0, "samples": 0})

    def copy(self) -> "Checkpoint":
        return Checkpoint.from_payload(*self.payload())

    def payload(self):
        manifest = {
            "format": 1,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "nets": {},
            "shaping": self.shaping.to_dict(),
            "optimizer": self.agent.optimizer_state(),
            "meta": self.meta,
        }
        blobs = {}
        for name, net in self.agent.nets().items():
            blob = net.to_bytes()
            blobs[f"{name}.bin"] = blob
            manifest["nets"][name] = {**net.manifest(), "blob": f"{name}.bin",
                                      "sha256": hashlib.sha256(blob).hexdigest()}
        return manifest, blobs

    @classmethod
    def from_payload(cls, manifest: dict, blobs: dict) -> "Checkpoint":
        from .nn import Mlp

        cfg = TrainConfig.from_dict(manifest["config"])
        env = cfg.make_env()
        agent = Agent(cfg.capacity, env.n_params, env.n_actions, cfg.ppo)
        for name, net in (("actor", "actor"), ("critic", "critic"), ("lambda", "lam_net")):
            entry = manifest["nets"][name]
            blob = blobs[entry["blob"]]
            if hashlib.sha256(blob).hexdigest() != entry["sha256"]:
                raise ValueError(f"checksum mismatch for {entry['blob']}")
            setattr(agent, net, Mlp.from_bytes(entry, blob))
        agent.load_optimizer_state(manifest["optimizer"])
        return cls(agent, ShapingModel.from_dict(manifest["shaping"]), cfg, manifest.get("meta", {}))

    def content_hash(self) -> str:
        manifest, blobs = self.payload()
        h = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode())
        for name in sorted(blobs):
            h.update(blobs[name])
        return h.hexdigest()

    def save(self, path) -> str:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        manifest, blobs = self.payload()
        for name, blob in blobs.items():
            (path / name).write_bytes(blob)
        (path / "model.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return self.content_hash()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        manifest = json.loads((path / "model.json").read_text())
        blobs = {e["blob"]: (path / e["blob"]).read_bytes() for e in manifest["nets"].values()}
        return cls.from_payload(manifest, blobs)


# ----------------------------------------------------------------- training

class Trainer:
    """Runs training epochs on a checkpoint in place.

    With ``population`` set, slot ``i`` always holds arm ``i`` of that fixed
    population (fine-tuning). With ``cfg.unique_arms > 0`` newcomers are drawn
    from a fixed pool of that many arms. Otherwise each newcomer gets freshly
    sampled dynamics.
    """

    def __init__(self, ckpt: Checkpoint, population: Population | None = None):
        self.ckpt = ckpt
        self.cfg = cfg = ckpt.cfg
        self.env = cfg.make_env()
        self.fmap = cfg.make_feature_map(self.env)
        self.costs = self.env.costs
        self.buffer = TransitionBuffer()
        self.population = population
        N = cfg.capacity
        if population is not None and len(population) > N:
            raise ValueError("population larger than capacity")
        self.pool = None
        if population is None and cfg.unique_arms > 0:
            self.pool = sample_population(self.env, self.fmap, cfg.unique_arms, [cfg.seed, 7], cfg.mask_features)
        self.params = np.zeros((N, self.env.n_params))
        self.z = np.zeros((N, self.env.n_params))
        self.s = np.zeros(N)
        self.xi = np.zeros(N, dtype=np.int8)
        self.arm_ids = np.full(N, -1)
        self.shape_s, self.shape_r = [], []
        self.boost_next = False
        self.history: list[dict] = []

    # slot management
    def _admit(self, rng):
        cfg, N = self.cfg, self.cfg.capacity
        live = np.flatnonzero(self.xi)
        renew = sample_opt_ins(live, cfg.training_opt_in_rate, rng) if self.meta["epochs_trained"] > 0 else np.ones(len(live), bool)
        n_new = N - len(live)
        if self.population is not None:
            # fixed arms keep their slots; an opted-out arm returns after one epoch
            new = np.ones(N, dtype=np.int8)
            new[live[~renew]] = 0
            for i in range(len(self.population), N):
                new[i] = 0
            entering = np.flatnonzero(new & (self.xi == 0))
            self.xi = new
            idx = entering
            self.params[idx] = self.population.params[idx]
            self.z[idx] = self.population.features[idx]
            self.arm_ids[idx] = idx
            return entering
        if self.pool is not None:
            taken = set(self.arm_ids[live[renew]].tolist())
            free = np.array([i for i in range(len(self.pool)) if i not in taken])
            picks = rng.choice(free, size=min(n_new, len(free)), replace=False)
            new_params, new_feats, new_ids = self.pool.params[picks], self.pool.features[picks], picks
        else:
            new_params = self.env.sample_params(rng, n_new)
            new_feats = make_features(self.env.param_vector(new_params), self.fmap)
            if len(cfg.mask_features):
                new_feats[:, list(cfg.mask_features)] = 0.0
            new_ids = np.full(n_new, -1)
        arms = [None] * N
        newcomers = list(range(len(new_params)))
        flags, slots = admit_requests(self.xi, list(renew), newcomers, arms, N)
        entering = []
        for slot, item in enumerate(slots):
            if isinstance(item, int):
                self.params[slot] = new_params[item]
                self.z[slot] = new_feats[item]
                self.arm_ids[slot] = new_ids[item]
                entering.append(slot)
        gone = (flags == 0)
        self.params[gone] = 0.0
        self.z[gone] = 0.0
        self.s[gone] = 0.0
        self.xi = flags
        return np.array(entering, dtype=np.int64)

    @property
    def meta(self):
        return self.ckpt.meta

    def _reset_states(self, rng, entering):
        live = np.flatnonzero(self.xi)
        mode = self.cfg.reset
        if mode == "uniform":
            self.s[live] = self.env.initial_states(rng, len(live))
        elif mode == "fixed" and self.population is not None and self.population.states is not None:
            self.s[live] = self.population.states[live]
        else:
            self.s[entering] = self.env.initial_states(rng, len(entering))

    def run_epoch(self, epoch_total: int | None = None) -> dict:
        cfg, agent, shaping = self.cfg, self.ckpt.agent, self.ckpt.shaping
        e = self.meta["epochs_trained"]
        n_total = epoch_total or cfg.n_epochs
        rng = epoch_rng(cfg.seed, e)
        entering = self._admit(rng)
        self._reset_states(rng, entering)
        live = np.flatnonzero(self.xi)

        s_bar_all = np.where(self.xi == 1, shaping(self.s), 0.0)
        lam_in = lambda_inputs(s_bar_all, self.z, self.xi)
        lam = agent.lam(s_bar_all, self.z, self.xi)
        self.buffer.tag_epoch(e, lam, self.xi, lam_in, cfg.n_steps)

        # training rollouts never check the budget
        z_live = self.z[live]
        for t in range(cfg.n_steps):
            s = self.s[live]
            s_bar = shaping(s)
            a, logp = agent.sample(arm_inputs(s_bar, lam, z_live), rng)
            s_next, r = self.env.step(self.params[live], s, a, rng)
            self.buffer.add(e, t, live, s, s_bar, a, r, shaping(s_next), z_live, logp, s_next, self.xi)
            if shaping.enabled:
                self.shape_s.append(s_next)
                self.shape_r.append(r)
            self.s[live] = s_next
        self.meta["samples"] = self.meta.get("samples", 0) + len(live) * cfg.n_steps

        ent = entropy_coeff(cfg.ppo, e, n_total)
        if self.boost_next:
            ent *= cfg.ppo.explore_boost
            self.boost_next = False
        try:
            info = agent.ppo_update(self.buffer.arrays(), self.buffer.window(e), cfg.discount, self.costs, ent)
        except TrainingDivergenceError as err:
            raise TrainingDivergenceError(f"epoch {e}: {err}") from err
        info.update(epoch=e, lam=lam, n_live=len(live), ent_coef=ent)

        if e >= cfg.ppo.lambda_freeze_epochs and e % cfg.K == 0:
            tags = self.buffer.epoch_tags
            sums = [self.buffer.epoch_cost_sums(tag.epoch, self.costs, cfg.discount, cfg.capacity).sum()
                    for tag in tags]
            info.update(agent.lambda_update(np.stack([t.lam_input for t in tags]),
                                            np.array([t.lam for t in tags]), np.array(sums), cfg.budget_term()))
            self.buffer.clear()
            self.boost_next = True
        if shaping.enabled and e % cfg.K == 0 and self.shape_s:
            shaping.fit(np.concatenate(self.shape_s), np.concatenate(self.shape_r), rng)
            self.shape_s, self.shape_r = [], []

        self.meta["epochs_trained"] = e + 1
        self.history.append(info)
        return info

    def train(self, n_epochs: int | None = None, callback: Callable | None = None):
        n = self.cfg.n_epochs if n_epochs is None else n_epochs
        start = self.meta["epochs_trained"]
        for _ in range(n):
            info = self.run_epoch(start + n)
            if callback is not None:
                callback(self, info)
        return self.ckpt


def pretrain(cfg: TrainConfig, callback: Callable | None = None) -> Checkpoint:
    ckpt = Checkpoint.initial(cfg)
    Trainer(ckpt).train(cfg.n_epochs, callback)
    return ckpt


# ----------------------------------------------------------------- inference

def greedy_proba(p, costs, budget: float, xi) -> np.ndarray:
    """One-hot action matrix chosen greedily by probability under the budget.

    Rows of opted-out arms are all zero.
    """
    c = costs.as_array() if isinstance(costs, ActionCosts) else np.asarray(costs, dtype=np.float64)
    idx = kernels.greedy_proba(np.ascontiguousarray(p, dtype=np.float64), c, float(budget),
                               np.ascontiguousarray(xi, dtype=np.int8))
    out = np.zeros(np.shape(p), dtype=np.int64)
    rows = np.flatnonzero(idx >= 0)
    out[rows, idx[rows]] = 1
    return out


@dataclass
class EvalReport:
    per_trial: np.ndarray
    rounds: int
    seed: int
    metadata: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return len(self.per_trial)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_trial))

    @property
    def stderr(self) -> float:
        n = len(self.per_trial)
        return float(np.std(self.per_trial, ddof=1) / np.sqrt(n)) if n > 1 else 0.0

    def summary(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "trials": self.trials, "rounds": self.rounds,
                "seed": self.seed, **self.metadata}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "reward_per_arm"])
            for i, r in enumerate(self.per_trial):
                w.writerow([i, repr(float(r))])

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.summary(), indent=2, default=float))


def run_policy(policy, env: Environment, population: Population, budget: float, opt_in_rate: float,
               trials: int = 50, rounds: int = 10, seed: int = 0, n_real: int | None = None) -> EvalReport:
    """Shared evaluation loop.

    ``policy(s, z, xi, rng)`` returns a one-hot action matrix for all arms.
    Opt-ins and initial states come from one stream and dynamics from
    another, so different policies face the same arms and the same noise.
    Reported reward is the undiscounted sum over rounds divided by the number
    of opted-in arms. Only the first ``n_real`` arms may opt in; the rest are
    padding.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    n = len(population)
    n_real = n if n_real is None else n_real
    per_trial = np.zeros(trials)
    costs = env.costs.as_array()
    for k in range(trials):
        setup, dyn, pol = (epoch_rng(seed, k, j) for j in range(3))
        xi = np.zeros(n, dtype=np.int8)
        xi[:n_real] = sample_opt_ins(range(n_real), opt_in_rate, setup)
        s = env.initial_states(setup, n)
        live = np.flatnonzero(xi)
        if not len(live):
            continue
        total = 0.0
        for _ in range(rounds):
            A = policy(s, population.features, xi, pol)
            if A[live].sum(axis=1).min() != 1 or (A @ costs).sum() > budget + 1e-9:
                raise AssertionError("policy produced an infeasible action matrix")
            a = A[live].argmax(axis=1)
            s_next, r = env.step(population.params[live], s[live], a, dyn)
            s[live] = s_next
            total += r.sum()
        per_trial[k] = total / len(live)
    return EvalReport(per_trial, rounds, seed, {"opt_in_rate": opt_in_rate, "budget": budget})


def checkpoint_policy(ckpt: Checkpoint, budget: float):
    agent, shaping, costs = ckpt.agent, ckpt.shaping, ckpt.cfg.make_env().costs

    def policy(s, z, xi, rng):
        s_bar = np.where(xi == 1, shaping(s), 0.0)
        lam = agent.lam(s_bar, z, xi)
        p = agent.probs(arm_inputs(s_bar, lam, z))
        return greedy_proba(p, costs, budget, xi)

    return policy


def evaluate(ckpt: Checkpoint, population: Population, opt_in_rate: float = 1.0, trials: int = 50,
             rounds: int = 10, seed: int = 0, budget: float | None = None) -> EvalReport:
    budget = ckpt.cfg.budget if budget is None else budget
    if len(population) > ckpt.cfg.capacity:
        raise ValueError("population larger than the model's capacity")
    env = ckpt.cfg.make_env()
    pop = pad_population(population, ckpt.cfg.capacity)
    report = run_policy(checkpoint_policy(ckpt, budget), env, pop, budget, opt_in_rate, trials, rounds, seed,
                        n_real=len(population))
    report.metadata["policy"] = "prefermab"
    return report


def pad_population(population: Population, capacity: int) -> Population:
    """Zero-filled dummy slots up to capacity."""
    extra = capacity - len(population)
    if extra <= 0:
        return population
    pad = lambda x: np.concatenate([x, np.zeros((extra,) + x.shape[1:])])  # noqa: E731
    states = None if population.states is None else pad(population.states)
    return Population(pad(population.params), pad(population.features), states)


def finetune(ckpt: Checkpoint, population: Population, cfg: TrainConfig | None = None, n_epochs: int = 20,
             eval_trials: int = 20, eval_seed: int = 1234, eval_opt_in: float | None = None):
    """Continue training on a fixed population, logging reward vs samples per arm.

    Returns the updated checkpoint and a list of curve rows, the first of
    which is the starting (zero-shot) evaluation.
    """
    ckpt = ckpt.copy()
    if cfg is not None:
        ckpt.cfg = cfg
        ckpt.agent.cfg = cfg.ppo
    ckpt.meta = {**ckpt.meta, "epochs_trained": 0, "samples": 0}
    rate = ckpt.cfg.training_opt_in_rate if eval_opt_in is None else eval_opt_in
    trainer = Trainer(ckpt, population)
    curve = []

    def record(_trainer=None, _info=None):
        rep = evaluate(ckpt, population, rate, eval_trials, 10, eval_seed)
        curve.append({"epoch": ckpt.meta["epochs_trained"],
                      "samples_per_arm": ckpt.meta["samples"] / len(population), "reward": rep.mean})

    record()
    trainer.train(n_epochs, record)
    return ckpt, curve
