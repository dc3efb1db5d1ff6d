"""Run configuration: training hyper-parameters, corpus spec and paths.

A run config file is a JSON document with up to three sections::

    {"train": {...}, "corpus": {...}, "paths": {...}}

Unknown sections or keys are rejected.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lambda_a: float = 0.05
    learning_rate: float = 1e-3
    k: int = 4
    d: int = 16
    batch: int = 16
    steps: int = 20_000
    seed: int = 0
    height: int = 32
    width: int = 32
    channels: int = 1
    elbo_kl_weight: float = 1.0
    kl_normalization: str = "pixels"
    decode_all_primitives: bool = False
    log_every: int = 100
    checkpoint_every: int = 5_000

    def __post_init__(self):
        if self.lambda_a < 0:
            raise ConfigError("lambda_a must be >= 0")
        if self.k < 1 or self.d < 1 or self.batch < 1:
            raise ConfigError("k, d and batch must be >= 1")
        if self.steps < 0 or self.learning_rate < 0 or self.elbo_kl_weight < 0:
            raise ConfigError("steps, learning_rate and elbo_kl_weight must be >= 0")
        if self.height % 8 or self.width % 8:
            raise ConfigError("image height and width must be multiples of 8")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")
        if self.kl_normalization not in ("pixels", "none"):
            raise ConfigError("kl_normalization must be 'pixels' or 'none'")

    @property
    def kl_scale(self) -> float:
        """Factor on KL terms: per-pixel nats under ``"pixels"``, matching the per-pixel L1 means."""
        if self.kl_normalization == "pixels":
            return 1.0 / (self.channels * self.height * self.width)
        return 1.0


@dataclass(frozen=True)
class CorpusSpec:
    n_train: int = 4096
    n_test: int = 256
    modes: int = 4
    mode_probs: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    height: int = 32
    width: int = 32
    channels: int = 1
    mask_policy: str = "center"
    mask_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode_probs", tuple(float(p) for p in self.mode_probs))
        if self.modes < 2 or len(self.mode_probs) != self.modes:
            raise ConfigError("need modes >= 2 and one probability per mode")
        if any(p < 0 for p in self.mode_probs) or abs(sum(self.mode_probs) - 1.0) > 1e-9:
            raise ConfigError("mode_probs must be a probability vector")
        if self.mask_policy not in ("center", "random"):
            raise ConfigError(f"unknown mask policy {self.mask_policy!r}")
        if not 0 < self.mask_fraction <= 0.9:
            raise ConfigError("mask_fraction must be in (0, 0.9]")
        if self.n_train < 0 or self.n_test < 0:
            raise ConfigError("sample counts must be >= 0")
        if self.channels not in (1, 3):
            raise ConfigError("channels must be 1 or 3")


@dataclass(frozen=True)
class Paths:
    data: str = "data"
    checkpoint: str = "run/model.ckpt"
    log: str = "run/train.jsonl"


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self) -> dict:
        return asdict(self)

    def check_consistent(self) -> None:
        t, c = self.train, self.corpus
        if (t.height, t.width, t.channels) != (c.height, c.width, c.channels):
            raise ConfigError(
                f"train image size {(t.channels, t.height, t.width)} does not match corpus "
                f"{(c.channels, c.height, c.width)}"
            )


def _build(cls, section: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"section {section!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad values in {section!r}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    unknown = sorted(set(doc) - {"train", "corpus", "paths"})
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    cfg = RunConfig(
        train=_build(TrainConfig, "train", doc.get("train", {})),
        corpus=_build(CorpusSpec, "corpus", doc.get("corpus", {})),
        paths=_build(Paths, "paths", doc.get("paths", {})),
    )
    cfg.check_consistent()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(doc)


def train_config_from_dict(values: dict) -> TrainConfig:
    return _build(TrainConfig, "train", values)


def corpus_spec_from_dict(values: dict) -> CorpusSpec:
    return _build(CorpusSpec, "corpus", values)
