"""One config file for the whole pipeline, TOML or JSON.

Sections map one-to-one onto the module configs (features, augment,
train, ...).  Parsing is validate-and-reject: any key the schema does
not know is an error, so typos cannot silently fall back to defaults.
A single top-level seed feeds every random draw downstream.
"""

from __future__ import annotations

import dataclasses
import inspect
import json
import os
import sys
from dataclasses import dataclass

from .augment import AugmentConfig
from .errors import ConfigError
from .features import FeatureConfig
from .nn.models import BUILDERS
from .train import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised only on older interpreters
    import tomli as tomllib

CACHE_ENV = "EEGPIPE_CACHE"


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str = "data"
    cache_dir: str = "cache"
    out_dir: str = "runs"


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 50
    rows_per_patient: int = 4
    noise_level: float = 0.0
    rate_hz: float = 200.0
    duration_s: float = 60.0
    noise_uv: float = 2.0
    amplitude_uv: float = 40.0
    high_vote_frac: float = 0.5


@dataclass(frozen=True)
class FoldsConfig:
    k: int = 5

    def __post_init__(self):
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")


@dataclass(frozen=True)
class ModelConfig:
    name: str = "eegnet"
    kwargs: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.name not in BUILDERS:
            raise ValueError(
                f"unknown model {self.name!r}; choose from "
                f"{sorted(BUILDERS)}")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = PathsConfig()
    synth: SynthConfig = SynthConfig()
    features: FeatureConfig = FeatureConfig()
    folds: FoldsConfig = FoldsConfig()
    augment: AugmentConfig = AugmentConfig()
    train: TrainConfig = TrainConfig()
    model: ModelConfig = ModelConfig()

    def cache_dir(self) -> str:
        return os.environ.get(CACHE_ENV, self.paths.cache_dir)


_SECTIONS = {
    "paths": PathsConfig,
    "synth": SynthConfig,
    "features": FeatureConfig,
    "folds": FoldsConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "model": ModelConfig,
}


def _build_section(cls, mapping, section: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    if section == "train":
        allowed.discard("augment")
        allowed.discard("seed")
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key {section}.{unknown[0]!r}; allowed: "
            f"{sorted(allowed)}")
    try:
        return cls(**mapping)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] section: {exc}") from exc


def _build_model_section(mapping) -> ModelConfig:
    mapping = dict(mapping)
    name = mapping.pop("name", "eegnet")
    if name not in BUILDERS:
        raise ConfigError(
            f"unknown key model.name value {name!r}; choose from "
            f"{sorted(BUILDERS)}")
    params = inspect.signature(BUILDERS[name]).parameters
    allowed = set(params) - {"seed"}
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(
            f"unknown key model.{unknown[0]!r} for {name!r}; allowed: "
            f"{sorted(allowed)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v
              for k, v in mapping.items()}
    return ModelConfig(name=name, kwargs=kwargs)


def config_from_dict(raw: dict) -> PipelineConfig:
    """Validate a parsed mapping and assemble the typed config."""
    known = set(_SECTIONS) | {"seed"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(
            f"unknown key {unknown[0]!r}; allowed: {sorted(known)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    parts = {}
    for section, cls in _SECTIONS.items():
        mapping = raw.get(section, {})
        if not isinstance(mapping, dict):
            raise ConfigError(f"section [{section}] must be a table")
        if section == "model":
            parts[section] = _build_model_section(mapping)
        elif section == "train":
            parts[section] = _build_section(cls, mapping, section)
        else:
            parts[section] = _build_section(cls, mapping, section)
    # The train stage owns augmentation and the global seed.
    train = parts["train"]
    parts["train"] = dataclasses.replace(train, seed=seed,
                                         augment=parts["augment"])
    return PipelineConfig(seed=seed, **parts)


def load_config(path: str) -> PipelineConfig:
    """Parse a .toml or .json config file into a PipelineConfig."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    try:
        if str(path).endswith(".json"):
            raw = json.loads(blob.decode("utf-8"))
        else:
            raw = tomllib.loads(blob.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError,
            UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table: {path}")
    return config_from_dict(raw)


def resolved_dict(cfg: PipelineConfig) -> dict:
    """Full JSON-able snapshot of every effective setting."""
    out = {"seed": cfg.seed}
    for section, cls in _SECTIONS.items():
        value = getattr(cfg, section)
        d = dataclasses.asdict(value)
        if section == "train":
            d.pop("augment", None)
            d.pop("seed", None)
        if section == "model":
            d = {"name": value.name, **value.kwargs}
        out[section] = d
    out["cache_dir_resolved"] = cfg.cache_dir()
    return out
