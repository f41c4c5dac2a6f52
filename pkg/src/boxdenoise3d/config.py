"""Run configuration: one JSON document with a section per component.

Unknown keys are rejected at every level.  ``config_hash`` is a SHA-256 of
the canonical JSON form, embedded in every report.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .matchcost import MatchConfig
from .neural.losses import LossConfig
from .neural.model import ModelConfig
from .neural.optim import OptimConfig
from .neural.train import TrainConfig
from .sampler import GridSpec
from .synthgen import SceneConfig


@dataclass(frozen=True)
class DataConfig:
    root: Optional[str] = None  # KITTI-style tree with label_2/, calib/, pred/, features/
    label_dir: Optional[str] = None
    calib_dir: Optional[str] = None
    pred_dir: Optional[str] = None
    feature_dir: Optional[str] = None
    feature_stride: float = 4.0
    image_size: tuple[int, int] = (1242, 375)

    def resolve(self, name: str) -> Optional[Path]:
        explicit = getattr(self, f"{name}_dir")
        if explicit:
            return Path(explicit)
        if self.root:
            sub = {"label": "label_2", "calib": "calib", "pred": "pred", "feature": "features"}[name]
            return Path(self.root) / sub
        return None


@dataclass(frozen=True)
class EvalSection:
    category: str = "Car"
    iou_threshold: float = 0.7
    k: int = 5


@dataclass(frozen=True)
class GridSection:
    range_m: float = 1.5
    stride_m: float = 0.75

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.range_m, self.stride_m)


_SECTIONS = {
    "data": DataConfig,
    "grid": GridSection,
    "match": MatchConfig,
    "loss": LossConfig,
    "model": ModelConfig,
    "optim": OptimConfig,
    "train": TrainConfig,
    "synth": SceneConfig,
    "eval": EvalSection,
}

_TUPLE_KEYS = {"image_size", "betas", "milestones", "n_objects", "depth_range", "anchor_sigma", "score_range"}


def _build(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"section {where!r} must be an object")
    if cls is SceneConfig:
        return SceneConfig.from_dict(d)
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    kw = {k: tuple(v) if k in _TUPLE_KEYS and isinstance(v, list) else v for k, v in d.items()}
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad value in {where!r}: {exc}") from None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    grid: GridSection = field(default_factory=GridSection)
    match: MatchConfig = field(default_factory=MatchConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        if "seed" in d:
            if not isinstance(d["seed"], int):
                raise ConfigError("seed must be an integer")
            kw["seed"] = d["seed"]
        for name, sec in _SECTIONS.items():
            if name in d:
                kw[name] = _build(sec, d[name], name)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in _SECTIONS:
            sec = getattr(self, name)
            out[name] = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
        return json.loads(json.dumps(out))

    def with_overrides(self, pairs: list[str]) -> "RunConfig":
        """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
        d = self.to_dict()
        for pair in pairs:
            if "=" not in pair:
                raise ConfigError(f"override {pair!r} is not key=value")
            key, raw = pair.split("=", 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            parts = key.split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config section in {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(d)


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
