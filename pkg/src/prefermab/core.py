"""Domain model: costs, arms, instances, opt-in admission and rollout storage."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ActionCosts:
    """Per-action costs; index 0 is the free passive action."""

    costs: tuple[float, ...]

    def __post_init__(self):
        costs = tuple(float(c) for c in self.costs)
        object.__setattr__(self, "costs", costs)
        if len(costs) < 2:
            raise ValueError("need at least two actions")
        if costs[0] != 0.0:
            raise ValueError("passive action must cost 0")
        if any(c < 0 or not np.isfinite(c) for c in costs):
            raise ValueError("costs must be finite and non-negative")

    @property
    def n_actions(self) -> int:
        return len(self.costs)

    @property
    def max(self) -> float:
        return max(self.costs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.costs, dtype=np.float64)

    def __getitem__(self, j):
        return self.costs[j]

    def __len__(self):
        return len(self.costs)


@dataclass
class ArmModel:
    """One arm: dynamics parameters, feature vector and current raw state.

    ``params`` are the environment's per-arm dynamics parameters (the four
    Bernoulli probabilities for Synthetic, the SIS rates, ...). Discrete
    environments can expand them into a transition tensor via ``envs``.
    """

    env: str
    params: np.ndarray
    feature: np.ndarray
    state: float = 0.0
    reward: str = "default"
    dummy: bool = False

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        self.feature = np.asarray(self.feature, dtype=np.float64)

    @classmethod
    def make_dummy(cls, env: str, n_params: int, n_features: int) -> "ArmModel":
        return cls(env, np.zeros(n_params), np.zeros(n_features), 0.0, dummy=True)

    def to_dict(self) -> dict:
        return {
            "dynamics": {"env": self.env, "params": self.params.tolist()},
            "reward": self.reward,
            "feature": self.feature.tolist(),
            "state": float(self.state),
            "dummy": self.dummy,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArmModel":
        dyn = d["dynamics"]
        return cls(
            env=dyn["env"],
            params=np.asarray(dyn["params"], dtype=np.float64),
            feature=np.asarray(d["feature"], dtype=np.float64),
            state=float(d.get("state", 0.0)),
            reward=d.get("reward", "default"),
            dummy=bool(d.get("dummy", False)),
        )


@dataclass
class RmabInstance:
    capacity: int
    budget: float
    discount: float
    costs: ActionCosts
    horizon: int = 10
    arms: list[ArmModel] = field(default_factory=list)
    env_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.costs, ActionCosts):
            self.costs = ActionCosts(tuple(self.costs))
        self.validate()

    def validate(self):
        if int(self.capacity) < 1:
            raise ValueError("capacity must be a positive integer")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.budget > self.capacity * self.costs.max:
            raise ValueError("budget exceeds capacity * max cost")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if len(self.arms) > self.capacity:
            raise ValueError(f"{len(self.arms)} arms exceed capacity {self.capacity}")

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "budget": self.budget,
            "discount": self.discount,
            "costs": list(self.costs.costs),
            "horizon": self.horizon,
            "env_options": self.env_options,
            "arms": [arm.to_dict() for arm in self.arms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RmabInstance":
        missing = [k for k in ("capacity", "budget", "discount", "costs", "arms") if k not in d]
        if missing:
            raise KeyError(f"instance is missing {', '.join(missing)}")
        return cls(
            capacity=int(d["capacity"]),
            budget=float(d["budget"]),
            discount=float(d["discount"]),
            costs=ActionCosts(tuple(d["costs"])),
            horizon=int(d.get("horizon", 10)),
            arms=[ArmModel.from_dict(a) for a in d["arms"]],
            env_options=dict(d.get("env_options", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "RmabInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_opt_ins(live: Sequence, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Independent renewal draw for each live arm."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"opt-in rate {rate} outside [0, 1]")
    return rng.random(len(live)) < rate


def admit_requests(current, renewals, newcomers, arms, capacity):
    """Apply one round of opt-out/opt-in requests to the slot table.

    ``renewals`` is aligned with the live slots (those with flag 1) in slot
    order. Renewing arms keep their slots; newcomers then take the free slots
    in arrival order, lowest slot first, and anything past capacity is
    rejected. Free slots left over hold dummy arms.

    Returns the new flag vector and slot list.
    """
    current = np.asarray(current, dtype=np.int8)
    if len(current) != capacity:
        raise ValueError(f"opt-in vector has length {len(current)}, expected {capacity}")
    live = np.flatnonzero(current)
    if len(renewals) != len(live):
        raise ValueError(f"{len(renewals)} renewals for {len(live)} live arms")
    template = next((a for a in list(arms) + list(newcomers) if isinstance(a, ArmModel) and not a.dummy), None)

    flags = np.zeros(capacity, dtype=np.int8)
    slots = list(arms) + [None] * (capacity - len(arms))
    for slot, keep in zip(live, renewals):
        if keep:
            flags[slot] = 1
    queue = iter(newcomers)
    for slot in range(capacity):
        if flags[slot]:
            continue
        arm = next(queue, None)
        if arm is None:
            break
        slots[slot] = arm
        flags[slot] = 1
    for slot in range(capacity):
        if not flags[slot]:
            if template is None:
                slots[slot] = None
            else:
                slots[slot] = ArmModel.make_dummy(template.env, len(template.params), len(template.feature))
    return flags, slots


def discounted_cost_sum(actions, costs: ActionCosts, beta: float, opt_in=None) -> np.ndarray:
    """Per-arm sum of beta**t times the cost paid at round t.

    ``actions`` has shape (H, n) with rows ordered by t from 0. Rounds where
    an arm is opted out pay the passive cost, which is zero.
    """
    actions = np.asarray(actions, dtype=np.int64)
    if actions.ndim == 1:
        actions = actions[:, None]
    paid = costs.as_array()[actions]
    if opt_in is not None:
        flags = np.broadcast_to(np.asarray(opt_in, dtype=bool), actions.shape)
        paid = np.where(flags, paid, costs[0])
    disc = beta ** np.arange(actions.shape[0])
    return disc @ paid


@dataclass
class EpochTag:
    epoch: int
    lam: float
    xi: np.ndarray
    lam_input: np.ndarray
    n_steps: int


_FIELDS = ("arm_id", "t", "s", "s_bar", "a", "r", "s_bar_next", "s_next", "logp", "epoch")


class TransitionBuffer:
    """Rollout records for the current lambda-update window.

    Records are stored column-wise; ``z`` holds each record's feature row.
    Only opted-in arms may be added.
    """

    def __init__(self):
        self.clear()

    def clear(self):
        self._cols = {k: [] for k in _FIELDS}
        self._z = []
        self.epoch_tags: list[EpochTag] = []
        self._cache = None

    def __len__(self):
        return sum(len(c) for c in self._cols["t"])

    def tag_epoch(self, epoch, lam, xi, lam_input, n_steps):
        self.epoch_tags.append(EpochTag(epoch, float(lam), np.asarray(xi, dtype=np.int8).copy(),
                                        np.asarray(lam_input, dtype=np.float64).copy(), n_steps))

    def add(self, epoch, t, arm_ids, s, s_bar, a, r, s_bar_next, z, logp, s_next, xi):
        arm_ids = np.asarray(arm_ids, dtype=np.int64)
        if not np.all(np.asarray(xi)[arm_ids] == 1):
            raise AssertionError("buffer record from an opted-out arm")
        r = np.asarray(r, dtype=np.float64)
        if not np.all(np.isfinite(r)):
            raise ValueError("non-finite reward in rollout")
        n = len(arm_ids)
        cols = self._cols
        cols["arm_id"].append(arm_ids)
        cols["t"].append(np.full(n, t, dtype=np.int64))
        cols["s"].append(np.asarray(s, dtype=np.float64))
        cols["s_bar"].append(np.asarray(s_bar, dtype=np.float64))
        cols["a"].append(np.asarray(a, dtype=np.int64))
        cols["r"].append(r)
        cols["s_bar_next"].append(np.asarray(s_bar_next, dtype=np.float64))
        cols["s_next"].append(np.asarray(s_next, dtype=np.float64))
        cols["logp"].append(np.asarray(logp, dtype=np.float64))
        cols["epoch"].append(np.full(n, epoch, dtype=np.int64))
        self._z.append(np.asarray(z, dtype=np.float64))
        self._cache = None

    def arrays(self) -> dict:
        """All records as concatenated column arrays (plus ``z`` and ``lam``)."""
        if self._cache is None:
            if not self._cols["t"]:
                out = {k: np.zeros(0) for k in _FIELDS}
                out["z"] = np.zeros((0, 0))
                out["lam"] = np.zeros(0)
            else:
                out = {k: np.concatenate(v) for k, v in self._cols.items()}
                out["z"] = np.concatenate(self._z)
                lam_of = {tag.epoch: tag.lam for tag in self.epoch_tags}
                out["lam"] = np.array([lam_of[e] for e in out["epoch"]], dtype=np.float64)
            self._cache = out
        return self._cache

    def window(self, epoch: int) -> dict:
        """Records of a single epoch."""
        cols = self.arrays()
        mask = cols["epoch"] == epoch
        return {k: v[mask] for k, v in cols.items()}

    def epoch_cost_sums(self, epoch: int, costs: ActionCosts, beta: float, capacity: int) -> np.ndarray:
        """Discounted cost per slot over one epoch window (zero for opted-out slots)."""
        tag = next(t for t in self.epoch_tags if t.epoch == epoch)
        rec = self.window(epoch)
        actions = np.zeros((tag.n_steps, capacity), dtype=np.int64)
        actions[rec["t"], rec["arm_id"]] = rec["a"]
        return discounted_cost_sum(actions, costs, beta, opt_in=tag.xi.astype(bool))

    def to_csv(self, path) -> None:
        cols = self.arrays()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm_id", "t", "s", "s_bar", "a", "r", "s_bar_next", "lambda", "xi"])
            for i in range(len(cols["t"])):
                w.writerow([int(cols["arm_id"][i]), int(cols["t"][i]), repr(float(cols["s"][i])),
                            repr(float(cols["s_bar"][i])), int(cols["a"][i]), repr(float(cols["r"][i])),
                            repr(float(cols["s_bar_next"][i])), repr(float(cols["lam"][i])), 1])
