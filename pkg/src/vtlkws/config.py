"""Versioned toolkit configuration (a single JSON file)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import AugmentPolicy
from .features import FrameSpec
from .model import ModelConfig
from .training import TrainConfig
from .warp import WarpConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    root: str | None = None
    manifest: str | None = None
    eval_list: str = "testing_list.txt"
    valid_list: str | None = "validation_list.txt"
    sample_rate: int = 16000
    target_samples: int = 16000
    skip_bad: bool = False
    noise_dir: str | None = None


@dataclass(frozen=True)
class OutputConfig:
    cache_dir: str = "cache"
    run_dir: str = "runs/default"


_WARP_KEYS = ("f0_hz", "fm_fraction_of_nyquist", "alpha_min", "alpha_max", "alpha_step")
_MODEL_KEYS = ("architecture", "channels", "first_kernel", "block_kernel")


@dataclass(frozen=True)
class ToolkitConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    frames: FrameSpec = field(default_factory=FrameSpec)
    warp: WarpConfig = field(default_factory=WarpConfig)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        warp = {k: getattr(self.warp, k) for k in _WARP_KEYS}
        model = {k: getattr(self.model, k) for k in _MODEL_KEYS}
        model["channels"] = list(model["channels"])
        return {
            "schema_version": self.schema_version,
            "dataset": asdict(self.dataset),
            "frames": self.frames.to_dict(),
            "warp": warp,
            "augment": self.augment.to_dict(),
            "train": self.train.to_dict(),
            "model": model,
            "output": asdict(self.output),
        }

    def replace(self, **sections) -> "ToolkitConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(sections)
        return ToolkitConfig(**d)


def _section(cls, data: dict, name: str, allowed=None, **extra):
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = set(allowed) if allowed is not None else {f.name for f in fields(cls)}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**data, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def from_dict(d: dict) -> ToolkitConfig:
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(ToolkitConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    dataset = _section(DatasetConfig, d.get("dataset", {}), "dataset")
    return ToolkitConfig(
        dataset=dataset,
        frames=_section(FrameSpec, d.get("frames", {}), "frames"),
        warp=_section(WarpConfig, d.get("warp", {}), "warp", allowed=_WARP_KEYS,
                      sample_rate=dataset.sample_rate),
        augment=_section(AugmentPolicy, d.get("augment", {}), "augment"),
        train=_section(TrainConfig, d.get("train", {}), "train"),
        model=_section(ModelConfig, d.get("model", {}), "model", allowed=_MODEL_KEYS),
        output=_section(OutputConfig, d.get("output", {}), "output"),
    )


def load_config(path) -> ToolkitConfig:
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(d)


def default_config() -> ToolkitConfig:
    return ToolkitConfig()
