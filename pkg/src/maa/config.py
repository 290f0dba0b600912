"""Run configuration: a single YAML document with strict key checking.

Unknown keys are rejected, every numeric field is re-validated against the
owning type's invariants, and the fully-resolved config is echoed into each
run directory so results are reproducible from the artifact alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .attack import AttackConfig
from .data import DatasetSpec
from .models.train import TrainSpec


class ConfigError(Exception):
    pass


DEFAULT_MODELS = {
    "source": {"arch": "patch_transformer", "input_size": 32,
               "train": {"epochs": 200}},
    "target": {"arch": "residual_cnn", "input_size": 40, "channels": 16,
               "train": {"epochs": 200, "seed": 2}},
}

_MODEL_KEYS = {
    "patch_transformer": {"arch", "train", "input_size", "patch_size", "width",
                          "n_blocks", "n_heads", "embed_dim", "mlp_ratio"},
    "residual_cnn": {"arch", "train", "input_size", "channels", "n_blocks",
                     "embed_dim", "kernel_size"},
}


@dataclass
class EvalSpec:
    split: str = "test"
    attack_subset: int = 64
    recall_ks: list[int] = field(default_factory=lambda: [1, 5, 10])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    trend_subset: int = 32  # smaller subset for the multi-seed trend suites

    def validate(self) -> None:
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"eval.split must be train|val|test, got {self.split!r}")
        if self.attack_subset < 1 or self.trend_subset < 1:
            raise ConfigError("eval subset sizes must be positive")
        if any(k < 1 for k in self.recall_ks):
            raise ConfigError(f"eval.recall_ks must be >= 1: {self.recall_ks}")


@dataclass
class RunConfig:
    output_root: Path
    seed: int
    dataset: DatasetSpec
    models: dict
    train: TrainSpec
    attack: AttackConfig
    eval: EvalSpec

    def to_dict(self) -> dict:
        d = {
            "output_root": str(self.output_root),
            "seed": self.seed,
            "dataset": {**asdict(self.dataset),
                        "split_fractions": list(self.dataset.split_fractions)},
            "models": self.models,
            "train": asdict(self.train),
            "attack": {**asdict(self.attack),
                       "beta": list(self.attack.beta) if self.attack.beta else None},
            "eval": asdict(self.eval),
        }
        return d


def _build(cls, section: dict, name: str, defaults: dict | None = None):
    allowed = set(cls.__dataclass_fields__)
    merged = dict(defaults or {})
    for key, value in section.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key} = {value!r}")
        merged[key] = value
    try:
        obj = cls(**merged)
    except TypeError as e:
        raise ConfigError(f"bad {name} section: {e}") from e
    return obj


def _validated(obj, name: str):
    try:
        obj.validate()
    except Exception as e:
        raise ConfigError(f"invalid {name} section: {e}") from e
    return obj


def config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw or {})
    known_top = {"output_root", "seed", "dataset", "models", "train", "attack", "eval"}
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"unknown key {key} = {raw[key]!r}")

    seed = int(raw.get("seed", 0))
    output_root = Path(os.environ.get("MAA_OUTPUT_ROOT") or raw.get("output_root", "runs"))

    ds_section = dict(raw.get("dataset", {}))
    ds_section.setdefault("seed", seed)
    ds_section.setdefault("split_fractions", (0.625, 0.125, 0.25))
    if isinstance(ds_section["split_fractions"], list):
        ds_section["split_fractions"] = tuple(ds_section["split_fractions"])
    dataset = _validated(_build(DatasetSpec, ds_section, "dataset"), "dataset")

    models = {}
    for name, spec in {**DEFAULT_MODELS, **raw.get("models", {})}.items():
        spec = dict(spec)
        arch = spec.get("arch")
        if arch not in _MODEL_KEYS:
            raise ConfigError(f"models.{name}.arch must be one of {sorted(_MODEL_KEYS)}, "
                              f"got {arch!r}")
        unknown = set(spec) - _MODEL_KEYS[arch]
        if unknown:
            raise ConfigError(f"unknown key models.{name}.{unknown.pop()}")
        bad = set(spec.get("train", {})) - set(TrainSpec.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown key models.{name}.train.{bad.pop()}")
        models[name] = spec
    if "source" not in models or "target" not in models:
        raise ConfigError("models must define 'source' and 'target'")

    tr_section = dict(raw.get("train", {}))
    tr_section.setdefault("seed", seed)
    train = _validated(_build(TrainSpec, tr_section, "train"), "train")

    at_section = dict(raw.get("attack", {}))
    at_section.setdefault("seed", seed)
    if isinstance(at_section.get("beta"), list):
        at_section["beta"] = tuple(at_section["beta"])
    attack = _validated(_build(AttackConfig, at_section, "attack"), "attack")

    ev = _validated(_build(EvalSpec, raw.get("eval", {}), "eval"), "eval")
    return RunConfig(output_root=output_root, seed=seed, dataset=dataset,
                     models=models, train=train, attack=attack, eval=ev)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    return config_from_dict(raw)


def serialize_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
