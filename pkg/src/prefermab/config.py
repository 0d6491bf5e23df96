"""TOML experiment configs.

Sections follow the package modules::

    [envs]     environment, its options and the feature map
    [engine]   capacity, budget, epochs and the rest of the training loop
    [agent]    PPO and lambda-network hyperparameters
    [shaping]  state-shaping estimator
    [bench]    suite grids, seeds and evaluation settings

Missing keys take their defaults; unknown keys are errors that name the key.
"""
from __future__ import annotations

import sys
from dataclasses import fields

import tomli_w

from .agent import PpoConfig
from .bench import BenchConfig
from .engine import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


ENV_KEYS = ("env", "env_options", "feature_map", "feature_seed", "mask_features")
SHAPING_KEYS = {"estimator": "shaping", "k": "shaping_k"}
ENGINE_KEYS = tuple(f.name for f in fields(TrainConfig)
                    if f.name not in ENV_KEYS and f.name not in SHAPING_KEYS.values() and f.name != "ppo")


def _check_type(where: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{where}: expected {type(default).__name__}, got {value!r}")
    return float(value) if isinstance(default, float) else value


def _take(section: str, table: dict, allowed, defaults: dict) -> dict:
    out = {}
    for key, value in table.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}")
        out[key] = _check_type(f"{section}.{key}", value, defaults[key])
    return out


def from_dict(doc: dict) -> tuple[TrainConfig, BenchConfig]:
    bad = [k for k in doc if k not in ("envs", "engine", "agent", "shaping", "bench")]
    if bad:
        raise ConfigError(f"unknown section {bad[0]}")
    base = TrainConfig().to_dict()
    train = {}
    train.update(_take("envs", doc.get("envs", {}), ENV_KEYS, base))
    train.update(_take("engine", doc.get("engine", {}), ENGINE_KEYS, base))
    sh = doc.get("shaping", {})
    for key, value in sh.items():
        if key not in SHAPING_KEYS:
            raise ConfigError(f"unknown key shaping.{key}")
        name = SHAPING_KEYS[key]
        train[name] = _check_type(f"shaping.{key}", value, base[name])
    ppo_defaults = PpoConfig().to_dict()
    ppo = _take("agent", doc.get("agent", {}), ppo_defaults.keys(), ppo_defaults)
    try:
        train_cfg = TrainConfig(**train, ppo=PpoConfig(**ppo))
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    bench_defaults = BenchConfig().to_dict()
    bench_keys = [k for k in bench_defaults if k != "train"]
    bench = _take("bench", doc.get("bench", {}), bench_keys, bench_defaults)
    return train_cfg, BenchConfig(train=train_cfg, **bench)


def to_dict(train: TrainConfig, bench: BenchConfig | None = None) -> dict:
    d = train.to_dict()
    doc = {
        "envs": {k: d[k] for k in ENV_KEYS},
        "engine": {k: d[k] for k in ENGINE_KEYS},
        "agent": d["ppo"],
        "shaping": {k: d[v] for k, v in SHAPING_KEYS.items()},
    }
    bench = bench or BenchConfig(train=train)
    doc["bench"] = {k: v for k, v in bench.to_dict().items() if k != "train"}
    return doc


def loads(text: str) -> tuple[TrainConfig, BenchConfig]:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"malformed TOML: {err}") from err
    return from_dict(doc)


def load(path) -> tuple[TrainConfig, BenchConfig]:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dumps(train: TrainConfig, bench: BenchConfig | None = None) -> str:
    return tomli_w.dumps(to_dict(train, bench))
