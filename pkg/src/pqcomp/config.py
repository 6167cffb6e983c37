"""TOML run configuration mirroring TrainConfig."""
from __future__ import annotations

import sys

import numpy as np

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def parse_toml(text: str) -> dict:
    return tomllib.loads(text)


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _quant(d: dict, default):
    from .quant import QuantConfig

    if not d:
        return default
    return QuantConfig(**d)


def train_config_from_dict(d: dict):
    """Build a TrainConfig from the ``[train]`` and ``[quant.*]`` tables."""
    from .pipelines import TrainConfig

    base = TrainConfig()
    train = dict(d.get("train", {}))
    unknown = set(train) - set(TrainConfig.__dataclass_fields__) | ({"weight_quant", "act_quant"} & set(train))
    if unknown:
        raise ConfigError(f"unknown [train] keys: {sorted(unknown)}")
    quant = d.get("quant", {})
    train["weight_quant"] = _quant(quant.get("weights"), base.weight_quant)
    train["act_quant"] = _quant(quant.get("activations"), base.act_quant)
    return TrainConfig(**train)


DATA_KEYS = {"source", "path", "seed", "n_per_class", "classes", "image_size", "noise", "limit",
             "test_n_per_class"}


def data_spec(d: dict) -> dict:
    spec = {"source": "synthetic", "seed": 0, "n_per_class": 60, "classes": 10, "image_size": 16,
            "noise": 0.2, "test_n_per_class": 20}
    spec.update(d.get("data", {}))
    unknown = set(spec) - DATA_KEYS
    if unknown:
        raise ConfigError(f"unknown [data] keys: {sorted(unknown)}")
    if spec["source"] not in ("synthetic", "cifar10"):
        raise ConfigError(f"data.source must be 'synthetic' or 'cifar10', got {spec['source']!r}")
    if spec["source"] == "cifar10" and not spec.get("path"):
        raise ConfigError("data.path is required for data.source = 'cifar10'")
    if spec["n_per_class"] < 1 or spec["test_n_per_class"] < 0:
        raise ConfigError("data.n_per_class must be positive and data.test_n_per_class nonnegative")
    return spec


def load_datasets(spec: dict):
    """(train, test) datasets described by a ``[data]`` table; test is None when none is held out."""
    from .data import gen_synthetic, load_cifar10

    if spec["source"] == "cifar10":
        limit = spec.get("limit")
        return (load_cifar10(spec["path"], "train", limit),
                load_cifar10(spec["path"], "test", limit))
    per_class = spec["n_per_class"] + spec["test_n_per_class"]
    full = gen_synthetic(spec["seed"], per_class, spec["classes"], spec["image_size"], spec["noise"])
    # samples are laid out class by class; the tail of each class is held out
    is_test = (np.arange(len(full)) % per_class) >= spec["n_per_class"]
    train = full.subset(np.flatnonzero(~is_test), "train")
    return train, (full.subset(np.flatnonzero(is_test), "test") if is_test.any() else None)
