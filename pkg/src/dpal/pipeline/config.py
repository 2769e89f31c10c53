"""Experiment configuration (one JSON document) and dataset construction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ..data import Dataset, load_mnist, make_polluted_public, synth_blobs, synth_noise_images
from ..data.datasets import NO_LABEL
from ..errors import ConfigError, DpalError
from ..model import Architecture
from ..numerics import seeded_rng
from ..privacy import DpSgdConfig
from ..selection import METHODS, SelectionConfig


@dataclass(frozen=True)
class FinetuneSettings:
    learning_rate: float = 0.05
    epochs: int = 20
    batch_size: int = 32

    def to_dict(self):
        return {"learning_rate": self.learning_rate, "epochs": self.epochs, "batch_size": self.batch_size}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict
    architecture: Architecture
    dpsgd: DpSgdConfig
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    finetune: FinetuneSettings = field(default_factory=FinetuneSettings)
    eps_limit: float | None = None
    delta: float = 1e-5
    seeds: tuple = (0, 1, 2, 3, 4)
    methods: tuple = ("random", "onlypublic")
    # each entry overrides SelectionConfig fields (and optionally
    # "checkpoint_epoch") for one set of rows
    sweep: tuple = ({},)
    pollution_policy: str = "random"
    name: str = "experiment"

    def to_dict(self):
        return {
            "name": self.name,
            "dataset": dict(self.dataset),
            "architecture": self.architecture.to_dict(),
            "dpsgd": self.dpsgd.to_dict(),
            "selection": self.selection.to_dict(),
            "finetune": self.finetune.to_dict(),
            "eps_limit": self.eps_limit,
            "delta": self.delta,
            "seeds": list(self.seeds),
            "methods": list(self.methods),
            "sweep": [dict(s) for s in self.sweep],
            "pollution_policy": self.pollution_policy,
        }


_SECTIONS = {
    "architecture": Architecture.from_dict,
    "dpsgd": DpSgdConfig.from_dict,
    "selection": SelectionConfig.from_dict,
    "finetune": lambda d: FinetuneSettings(**d),
}


def config_from_dict(d) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset" not in d or "architecture" not in d or "dpsgd" not in d:
        raise ConfigError("config needs 'dataset', 'architecture' and 'dpsgd' sections")
    kwargs = dict(d)
    try:
        for key, build in _SECTIONS.items():
            if key in kwargs:
                kwargs[key] = build(kwargs[key])
        for key in ("seeds", "methods"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        if "sweep" in kwargs:
            kwargs["sweep"] = tuple(dict(s) for s in kwargs["sweep"]) or ({},)
        cfg = ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (DpalError, TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
    if cfg.eps_limit is not None and cfg.eps_limit <= 0:
        raise ConfigError("eps_limit must be positive")
    if not cfg.seeds:
        raise ConfigError("at least one seed is required")
    if cfg.dataset.get("kind") not in ("mnist", "blobs"):
        raise ConfigError("dataset.kind must be 'mnist' or 'blobs'")
    for override in cfg.sweep:
        try:
            selection_for(cfg, override, seed=0)
        except DpalError as exc:
            raise ConfigError(f"invalid sweep entry {override}: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def selection_for(cfg: ExperimentConfig, override, seed) -> SelectionConfig:
    """SelectionConfig for one sweep entry and seed."""
    sel = {k: v for k, v in override.items() if k != "checkpoint_epoch"}
    try:
        return replace(cfg.selection, seed=seed, **sel)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def steps_per_epoch(cfg: ExperimentConfig) -> int:
    return cfg.dpsgd.steps_per_epoch or max(1, int(round(1.0 / cfg.dpsgd.sampling_rate)))


@dataclass(frozen=True)
class ExperimentData:
    private: Dataset
    public: Dataset
    test: Dataset


def _pollution_count(n_clean, fraction):
    if not 0.0 <= fraction < 1.0:
        raise ConfigError("pollution_fraction must lie in [0, 1)")
    return int(round(n_clean * fraction / (1.0 - fraction)))


def _blob_pollution(n, spec, seed):
    """Points equidistant from every class centre, pushed off the class simplex."""
    k, dim = spec["num_classes"], spec["dim"]
    if dim < k:
        raise ConfigError("blob pollution needs dim >= num_classes")
    sep = spec.get("separation", 10.0)
    center = np.zeros(dim)
    center[k - 1] = spec.get("pollution_offset", sep)
    rng = seeded_rng(seed)
    feats = center + spec.get("spread", 1.0) * rng.standard_normal((n, dim))
    return Dataset(feats, np.full(n, NO_LABEL), role="public", pollution=np.ones(n, dtype=bool), num_classes=k)


def build_data(spec) -> ExperimentData:
    """Private training set, public pool (optionally polluted) and test set."""
    kind = spec.get("kind")
    split_seed = spec.get("split_seed", 0)
    if kind == "mnist":
        private, public, test = load_mnist(spec.get("dir"), spec.get("n_public", 10000), split_seed)
        if spec.get("n_private"):
            private = private.subset(np.arange(spec["n_private"]))
        n_poll = _pollution_count(len(public), spec.get("pollution_fraction", 0.0))
        pollution = synth_noise_images(n_poll, seed=spec.get("pollution_seed", 0))
    elif kind == "blobs":
        k, dim = spec["num_classes"], spec["dim"]
        spread, sep = spec.get("spread", 1.0), spec.get("separation", 10.0)
        sizes = [spec.get("n_private", 1000), spec.get("n_public", 500), spec.get("n_test", 500)]
        parts = []
        for i, n in enumerate(sizes):
            per_class = int(math.ceil(n / k))
            ds = synth_blobs(k, per_class, dim, spread, seed=[split_seed, i], separation=sep)
            parts.append(ds.subset(np.arange(n)))
        private, public, test = (
            parts[0].with_role("private_train"),
            parts[1].with_role("public"),
            parts[2].with_role("test"),
        )
        n_poll = _pollution_count(len(public), spec.get("pollution_fraction", 0.0))
        pollution = _blob_pollution(n_poll, spec, seed=[split_seed, 99])
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if len(pollution):
        public = make_polluted_public(public, pollution, seeded_rng([split_seed, 7]))
    return ExperimentData(private, public, test)


__all__ = [
    "ExperimentConfig",
    "ExperimentData",
    "FinetuneSettings",
    "build_data",
    "config_from_dict",
    "load_config",
    "selection_for",
    "steps_per_epoch",
]
