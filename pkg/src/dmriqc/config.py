"""Experiment configuration: one JSON document drives every command.

Unknown keys are rejected and all defaults are materialized back into the
stored copy, so a saved config plus its seeds reproduces a run exactly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentConfig
from .backbone import FeatureBackbone
from .detectors import BackendSpec, PcaConfig, RfConfig, SvmConfig
from .errors import ConfigError
from .evaluation import FoldSpec
from .features import GaborConfig, LbpConfig, ZernikeConfig
from .heads import HeadConfig, TrainConfig
from .pipeline import ThresholdConfig
from .volume import VIEWS, ExclusionRule

CONFIG_VERSION = 1

_TUPLE_FIELDS = {"zoom_range", "input_shape", "pairs"}


@dataclass(frozen=True)
class DataSection:
    volumes_dir: str = ""
    labels_csv: str = ""


@dataclass(frozen=True)
class DatasetRef:
    id: str
    volumes_dir: str
    labels_csv: str


@dataclass(frozen=True)
class EvalSection:
    train_ids: tuple[str, ...] = ()
    test_id: str = ""
    thresholds: tuple[int, ...] = tuple(range(1, 11))
    finetune_fraction: float = 0.10
    model_path: str = ""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    view: str = "axial"
    data: DataSection = field(default_factory=DataSection)
    datasets: tuple[DatasetRef, ...] = ()
    exclusion: ExclusionRule = field(default_factory=ExclusionRule)
    augment: AugmentConfig | None = None
    backend: BackendSpec = field(default_factory=BackendSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    folds: FoldSpec = field(default_factory=FoldSpec)
    evaluation: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ConfigError(f"view must be one of {VIEWS}, got {self.view!r}")


def _build(cls, data, path: str):
    """Construct a dataclass from a dict, rejecting unknown keys."""
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    spec_fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(spec_fields)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = spec_fields[name]
        nested = _NESTED.get((cls, name))
        if nested is not None and value is not None:
            if name == "datasets":
                value = tuple(_build(DatasetRef, v, f"{path}.{name}[{i}]") for i, v in enumerate(value))
            else:
                value = _build(nested, value, f"{path}.{name}")
        elif isinstance(value, list) and name in _TUPLE_FIELDS:
            value = tuple(value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


_NESTED = {
    (ExperimentConfig, "data"): DataSection,
    (ExperimentConfig, "datasets"): DatasetRef,
    (ExperimentConfig, "exclusion"): ExclusionRule,
    (ExperimentConfig, "augment"): AugmentConfig,
    (ExperimentConfig, "backend"): BackendSpec,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "thresholds"): ThresholdConfig,
    (ExperimentConfig, "folds"): FoldSpec,
    (ExperimentConfig, "evaluation"): EvalSection,
    (BackendSpec, "backbone"): FeatureBackbone,
    (BackendSpec, "gabor"): GaborConfig,
    (BackendSpec, "zernike"): ZernikeConfig,
    (BackendSpec, "lbp"): LbpConfig,
    (BackendSpec, "head"): HeadConfig,
    (BackendSpec, "rf"): RfConfig,
    (BackendSpec, "pca"): PcaConfig,
    (BackendSpec, "svm"): SvmConfig,
}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    version = raw.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {version!r}")
    return _build(ExperimentConfig, raw, "config")


def config_to_dict(config: ExperimentConfig) -> dict:
    """Fully materialized config (every default spelled out)."""

    def convert(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: convert(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [convert(v) for v in obj]
        return obj

    return {"version": CONFIG_VERSION, **convert(config)}


def save_config(config: ExperimentConfig, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n")
