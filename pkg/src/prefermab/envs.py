"""Arm simulators, feature maps and distribution-shift construction.

Every step function is vectorized: ``params`` is an (n, k) array (or a single
parameter dataclass), ``s`` and ``a`` are length-n arrays, and the return
value is ``(s_next, reward)``. Discrete environments return integer-valued
float states so all environments share one state dtype.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, field
from typing import ClassVar

import numpy as np

from .core import ActionCosts, ArmModel


def _rows(params, k):
    if hasattr(params, "as_array"):
        params = params.as_array()
    return np.atleast_2d(np.asarray(params, dtype=np.float64)).reshape(-1, k)


@dataclass(frozen=True)
class SyntheticParams:
    """Probability of moving to state 0 from state j under action k (``pjk``)."""

    p00: float
    p01: float
    p10: float
    p11: float

    def as_array(self):
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, x):
        return cls(*map(float, x))


@dataclass(frozen=True)
class SisParams:
    kappa: float
    r_infect: float
    a1_eff: float
    a2_eff: float
    S: int = 150

    def as_array(self):
        return np.array([self.kappa, self.r_infect, self.a1_eff, self.a2_eff], dtype=np.float64)


@dataclass(frozen=True)
class ArmmanParams:
    """Six 'move toward engagement' probabilities, indexed (state, action).

    States: 0 self-motivated, 1 persuadable, 2 lost cause. From state 0 the
    good move is staying put; from 1 it is moving to 0; from 2 it is moving
    to 1. The complementary move goes one step toward state 2.
    """

    up: tuple
    archetype: str = "persuadable"

    def as_array(self):
        return np.asarray(self.up, dtype=np.float64).ravel()


@dataclass(frozen=True)
class ContSynthParams:
    mu0: float
    mu1: float
    sigma0: float = 0.2
    sigma1: float = 0.2

    def as_array(self):
        return np.array([self.mu0, self.mu1], dtype=np.float64)


# ---------------------------------------------------------------- step functions

def synthetic_step(params, s, a, rng):
    p = _rows(params, 4)
    s = np.asarray(s, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    p_zero = p[np.arange(len(p)) if len(p) > 1 else 0, 2 * s + a]
    s_next = (rng.random(np.shape(s)) >= p_zero).astype(np.float64)
    return s_next, s_next.copy()


def sis_infection_prob(params, s, a, S):
    """Per-person infection probability for ``s`` uninfected out of ``S``."""
    p = _rows(params, 4)
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    kappa = np.where(a == 1, p[:, 0] / p[:, 2], p[:, 0])
    r = np.where(a == 2, p[:, 1] / p[:, 3], p[:, 1])
    return 1.0 - np.exp(-kappa * ((S - s) / S) * r)


def sis_step(params, s, a, rng, S=None, recovery=0.5, reward_scale=10.0):
    """Uninfected count after one round: binomial infections and recoveries."""
    if S is None:
        S = params.S if isinstance(params, SisParams) else 150
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0) or np.any(s > S):
        raise ValueError(f"SIS state outside [0, {S}]")
    q = sis_infection_prob(params, s, a, S)
    n = s.astype(np.int64)
    infected = rng.binomial(n, q)
    recovered = rng.binomial(S - n, recovery)
    s_next = (n - infected + recovered).astype(np.float64)
    return s_next, reward_scale * s_next / S


def cont_sis_step(params, s, a, rng, S=1000, recovery=0.5, reward_scale=10.0):
    """Normal approximation of the SIS round on the uninfected fraction."""
    s = np.asarray(s, dtype=np.float64)
    n = s * S
    q = sis_infection_prob(params, n, a, S)
    mean = n * (1.0 - q) + (S - n) * recovery
    var = n * q * (1.0 - q) + (S - n) * recovery * (1.0 - recovery)
    count = np.clip(mean + np.sqrt(var) * rng.standard_normal(np.shape(s)), 0.0, S)
    s_next = count / S
    return s_next, reward_scale * s_next


def armman_tensor(params) -> np.ndarray:
    """(3, 2, 3) transition tensor induced by the six parameters of one arm."""
    u = np.clip(_rows(params, 6)[0].reshape(3, 2), 0.0, 1.0)
    T = np.zeros((3, 2, 3))
    T[0, :, 0], T[0, :, 1] = u[0], 1 - u[0]
    T[1, :, 0], T[1, :, 2] = u[1], 1 - u[1]
    T[2, :, 1], T[2, :, 2] = u[2], 1 - u[2]
    return T / T.sum(axis=2, keepdims=True)


def categorical_step(T, s, a, rng):
    """Draw next states from per-arm tensors ``T`` of shape (n, S, A, S)."""
    s = np.asarray(s, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    rows = T[np.arange(len(T)), s, a]
    cdf = np.cumsum(rows, axis=1)
    u = rng.random(len(rows))[:, None]
    return np.minimum((u >= cdf).sum(axis=1), rows.shape[1] - 1)


def armman_step(params, s, a, rng):
    p = _rows(params, 6)
    T = np.stack([armman_tensor(row) for row in p])
    s_next = categorical_step(T, np.atleast_1d(s), np.atleast_1d(a), rng).astype(np.float64)
    return s_next, (s_next == 0).astype(np.float64)


REWARD_FNS = {
    "linear": lambda s: np.asarray(s, dtype=np.float64),
    "scaled_linear": lambda s: np.minimum(2.0 * np.asarray(s, dtype=np.float64), 1.0),
    "exponential": lambda s: np.minimum(np.expm1(np.asarray(s, dtype=np.float64)), 1.0),
}


def cont_synth_step(params, s, a, rng, sigma=0.2, reward="linear"):
    p = _rows(params, 2)
    s = np.asarray(s, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    mu = np.where(a == 1, p[:, 1], p[:, 0])
    s_next = np.clip(s + mu + sigma * rng.standard_normal(np.shape(s)), 0.0, 1.0)
    return s_next, REWARD_FNS[reward](s_next)


# ---------------------------------------------------------------- feature maps

@dataclass(frozen=True)
class FeatureMap:
    kind: str
    matrix: np.ndarray
    seed: int = 0

    def __call__(self, x):
        return make_features(x, self)


def make_feature_map(kind: str, m: int, seed: int) -> FeatureMap:
    if kind not in ("identity", "linear", "sigmoid"):
        raise ValueError(f"unknown feature map {kind!r}")
    A = np.random.default_rng(seed).standard_normal((m, m))
    return FeatureMap(kind, A, seed)


def make_features(x, fmap: FeatureMap) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if fmap.kind == "identity":
        return x.copy()
    y = x @ fmap.matrix.T
    if fmap.kind == "linear":
        return y
    return 1.0 / (1.0 + np.exp(-y))


# ---------------------------------------------------------------- distribution shift

def apply_wasserstein_shift(params, delta: float, rng=None):
    """Move every Bernoulli parameter up by ``delta``, clamped to [0, 1]."""
    if delta < 0:
        raise ValueError("shift delta must be non-negative")
    if isinstance(params, SyntheticParams):
        return SyntheticParams.from_array(np.clip(params.as_array() + delta, 0.0, 1.0))
    return np.clip(np.asarray(params, dtype=np.float64) + delta, 0.0, 1.0)


def bernoulli_wasserstein(b1, b2):
    return np.abs(np.asarray(b2, dtype=np.float64) - np.asarray(b1, dtype=np.float64))


# ---------------------------------------------------------------- environments

@dataclass
class Environment:
    """Sampling distribution plus simulator for one family of arms."""

    name: ClassVar[str] = ""
    n_actions: ClassVar[int] = 2
    discrete: ClassVar[bool] = True
    param_names: ClassVar[tuple] = ()
    cost_values: tuple = (0.0, 1.0)

    @property
    def costs(self) -> ActionCosts:
        return ActionCosts(self.cost_values)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    n_features = n_params

    def options(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    def param_vector(self, params) -> np.ndarray:
        return np.asarray(params, dtype=np.float64).reshape(-1, self.n_params)

    def make_arms(self, params, fmap: FeatureMap, states, mask=()) -> list[ArmModel]:
        feats = make_features(self.param_vector(params), fmap)
        if len(mask):
            feats[:, list(mask)] = 0.0
        return [ArmModel(self.name, p, f, float(s), self.reward_tag) for p, f, s in zip(params, feats, states)]

    reward_tag = "default"


@dataclass
class SyntheticEnv(Environment):
    name: ClassVar[str] = "synthetic"
    param_names: ClassVar[tuple] = ("p00", "p01", "p10", "p11")
    ranges: tuple = ((0.4, 0.6), (0.4, 0.6), (0.8, 1.0), (0.0, 1.0))
    shift: float = 0.0
    n_states: int = 2

    def sample_params(self, rng, n):
        lo, hi = np.asarray(self.ranges, dtype=np.float64).T
        p = lo + (hi - lo) * rng.random((n, 4))
        return apply_wasserstein_shift(p, self.shift) if self.shift else p

    def initial_states(self, rng, n):
        return rng.integers(0, 2, n).astype(np.float64)

    def step(self, params, s, a, rng):
        return synthetic_step(params, s, a, rng)

    def transition_tensor(self, params):
        p = np.asarray(params, dtype=np.float64).reshape(2, 2)
        T = np.empty((2, 2, 2))
        T[:, :, 0] = p
        T[:, :, 1] = 1.0 - p
        return T

    def state_rewards(self):
        return np.array([0.0, 1.0])


@dataclass
class SisEnv(Environment):
    name: ClassVar[str] = "sis"
    n_actions: ClassVar[int] = 3
    param_names: ClassVar[tuple] = ("kappa", "r_infect", "a1_eff", "a2_eff")
    cost_values: tuple = (0.0, 1.0, 2.0)
    ranges: tuple = ((1.0, 10.0), (0.5, 0.99), (1.0, 10.0), (1.0, 10.0))
    S: int = 150
    recovery: float = 0.5
    reward_scale: float = 10.0

    @property
    def n_states(self):
        return self.S + 1

    def sample_params(self, rng, n):
        lo, hi = np.asarray(self.ranges, dtype=np.float64).T
        return lo + (hi - lo) * rng.random((n, 4))

    def param_vector(self, params):
        return np.asarray(params, dtype=np.float64).reshape(-1, 4) / np.array([10.0, 1.0, 10.0, 10.0])

    def initial_states(self, rng, n):
        return rng.integers(0, self.S + 1, n).astype(np.float64)

    def step(self, params, s, a, rng):
        return sis_step(params, s, a, rng, S=self.S, recovery=self.recovery, reward_scale=self.reward_scale)

    def transition_tensor(self, params):
        from scipy.stats import binom

        S = self.S
        states = np.arange(S + 1)
        T = np.zeros((S + 1, 3, S + 1))
        for a in range(3):
            q = sis_infection_prob(np.tile(params, (S + 1, 1)), states, np.full(S + 1, a), S)
            for s in states:
                inf = binom.pmf(np.arange(s + 1), s, q[s])
                rec = binom.pmf(np.arange(S - s + 1), S - s, self.recovery)
                np.add.at(T[s, a], (s - np.arange(s + 1))[:, None] + np.arange(S - s + 1)[None, :],
                          inf[:, None] * rec[None, :])
        return T

    def state_rewards(self):
        return self.reward_scale * np.arange(self.S + 1) / self.S


@dataclass
class ArmmanEnv(Environment):
    name: ClassVar[str] = "armman"
    param_names: ClassVar[tuple] = ("u00", "u01", "u10", "u11", "u20", "u21")
    mix: tuple = (0.2, 0.2, 0.6)
    width: float = 0.5
    n_states: int = 3

    ARCHETYPES: ClassVar[dict] = {
        "motivated": ((0.90, 0.95), (0.60, 0.80), (0.30, 0.50)),
        "persuadable": ((0.50, 0.80), (0.20, 0.80), (0.10, 0.50)),
        "lost_cause": ((0.20, 0.30), (0.10, 0.20), (0.05, 0.10)),
    }

    def sample_archetypes(self, rng, n):
        names = list(self.ARCHETYPES)
        return [names[i] for i in rng.choice(3, size=n, p=np.asarray(self.mix) / np.sum(self.mix))]

    def sample_params(self, rng, n):
        out = np.empty((n, 6))
        for i, kind in enumerate(self.sample_archetypes(rng, n)):
            c = np.asarray(self.ARCHETYPES[kind]).ravel()
            lo = np.clip(c - self.width / 2, 0.0, 1.0)
            hi = np.clip(c + self.width / 2, 0.0, 1.0)
            out[i] = lo + (hi - lo) * rng.random(6)
        return out

    def initial_states(self, rng, n):
        return rng.integers(0, 3, n).astype(np.float64)

    def step(self, params, s, a, rng):
        return armman_step(params, s, a, rng)

    def transition_tensor(self, params):
        return armman_tensor(params)

    def state_rewards(self):
        return np.array([1.0, 0.0, 0.0])


@dataclass
class ContSyntheticEnv(Environment):
    name: ClassVar[str] = "cont_synthetic"
    discrete: ClassVar[bool] = False
    param_names: ClassVar[tuple] = ("mu0", "mu1")
    ranges: tuple = ((-0.5, -0.1), (0.1, 0.5))
    sigma: float = 0.2
    reward: str = "linear"

    @property
    def reward_tag(self):
        return self.reward

    def sample_params(self, rng, n):
        lo, hi = np.asarray(self.ranges, dtype=np.float64).T
        return lo + (hi - lo) * rng.random((n, 2))

    def initial_states(self, rng, n):
        return rng.random(n)

    def step(self, params, s, a, rng):
        return cont_synth_step(params, s, a, rng, sigma=self.sigma, reward=self.reward)


@dataclass
class ContSisEnv(Environment):
    name: ClassVar[str] = "cont_sis"
    n_actions: ClassVar[int] = 3
    discrete: ClassVar[bool] = False
    param_names: ClassVar[tuple] = ("kappa", "r_infect", "a1_eff", "a2_eff")
    cost_values: tuple = (0.0, 1.0, 2.0)
    ranges: tuple = ((1.0, 10.0), (0.5, 0.99), (1.0, 10.0), (1.0, 10.0))
    S: int = 1000
    recovery: float = 0.5
    reward_scale: float = 10.0

    def sample_params(self, rng, n):
        lo, hi = np.asarray(self.ranges, dtype=np.float64).T
        return lo + (hi - lo) * rng.random((n, 4))

    def param_vector(self, params):
        return np.asarray(params, dtype=np.float64).reshape(-1, 4) / np.array([10.0, 1.0, 10.0, 10.0])

    def initial_states(self, rng, n):
        return rng.random(n)

    def step(self, params, s, a, rng):
        return cont_sis_step(params, s, a, rng, S=self.S, recovery=self.recovery, reward_scale=self.reward_scale)


ENVIRONMENTS = {cls.name: cls for cls in (SyntheticEnv, SisEnv, ArmmanEnv, ContSyntheticEnv, ContSisEnv)}


def make_env(name: str, **options) -> Environment:
    try:
        cls = ENVIRONMENTS[name]
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None
    fields = cls.__dataclass_fields__
    bad = [k for k in options if k not in fields]
    if bad:
        raise ValueError(f"unknown option(s) for {name}: {', '.join(bad)}")
    converted = {k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
                 for k, v in options.items()}
    return cls(**converted)
