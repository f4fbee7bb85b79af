"""Configuration loading for dscg_localizer."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import yaml

from .constants import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_THRESHOLDS,
    LAYER_NORM_EPS,
    RELATION_ALIASES,
    RELATION_NAMES,
    SCALE_NORM_EPS,
    SUCCESS_THRESHOLD,
)
from .errors import ConfigError


def parse_relations(value: str | Iterable[str] | None) -> Tuple[str, ...]:
    """Normalise a relation subset given as ``"atloc,usedfor"`` or a list of names."""
    if value is None:
        return RELATION_NAMES
    tokens = value.split(",") if isinstance(value, str) else list(value)
    chosen = set()
    for token in tokens:
        key = str(token).strip().lower()
        if not key:
            continue
        if key not in RELATION_ALIASES:
            raise ConfigError(f"unknown relation '{token}' (expected one of {', '.join(sorted(RELATION_ALIASES))})")
        chosen.add(RELATION_ALIASES[key])
    return tuple(name for name in RELATION_NAMES if name in chosen)


def _load_yaml(path: Path | str) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must evaluate to a dictionary")
    return data


def parse_range(value: Any, name: str) -> Tuple[float, float]:
    if isinstance(value, str):
        value = value.split(":")
    if not isinstance(value, Sequence) or len(value) != 2:
        raise ConfigError(f"{name} must be a pair of numbers")
    try:
        low, high = float(value[0]), float(value[1])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} must be a pair of numbers, got {value!r}") from exc
    if low > high:
        raise ConfigError(f"{name} lower bound exceeds upper bound")
    return low, high


@dataclass(slots=True)
class ModelConfig:
    d_emb: int = 300
    first_dim: int = 256
    layers: int = 4
    heads: int = 4
    dim: int = 2
    relations: Tuple[str, ...] = RELATION_NAMES
    concat_initial: bool = True
    ln_eps: float = LAYER_NORM_EPS
    sn_eps: float = SCALE_NORM_EPS

    def __post_init__(self) -> None:
        self.relations = parse_relations(self.relations)
        self.validate()

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("model.layers must be >= 1")
        if self.d_emb < 1 or self.first_dim < 1:
            raise ConfigError("model.d_emb and model.first_dim must be positive")
        if self.heads < 1:
            raise ConfigError("model.heads must be >= 1")
        if self.dim not in (2, 3):
            raise ConfigError("model.dim must be 2 or 3")
        for _, d_out in self.layer_dims():
            if d_out % self.heads:
                raise ConfigError(f"model.heads={self.heads} does not divide layer width {d_out}")

    def layer_dims(self) -> List[Tuple[int, int]]:
        dims = [(self.d_emb, self.first_dim)]
        for _ in range(self.layers - 1):
            dims.append((dims[-1][1], 2 * self.first_dim))
        return dims

    def head_in(self) -> int:
        d_last = self.layer_dims()[-1][1]
        return 2 * (self.d_emb + d_last) if self.concat_initial else 2 * d_last

    @property
    def edge_dim(self) -> int:
        return 4 + self.dim

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload["relations"] = list(self.relations)
        return payload

    @classmethod
    def from_dict(cls, payload: Optional[Dict[str, Any]]) -> "ModelConfig":
        payload = dict(payload or {})
        known = {name for name in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**payload)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid model config: {exc}") from exc


@dataclass(slots=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-4
    optimiser: str = "adam"
    augment: bool = True
    seed: int = 0
    val_interval: int = 1
    clip_norm: Optional[float] = 10.0
    accumulate: int = 1
    workers: int = 1
    record_timing: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("train.epochs must be >= 1")
        if not self.lr > 0:
            raise ConfigError("train.lr must be > 0")
        if self.optimiser not in ("adam", "adafactor"):
            raise ConfigError("train.optimiser must be 'adam' or 'adafactor'")
        if self.val_interval < 1:
            raise ConfigError("train.val_interval must be >= 1")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("train.clip_norm must be > 0 or null")
        if self.accumulate < 1 or self.workers < 1:
            raise ConfigError("train.accumulate and train.workers must be >= 1")

    def to_dict(self) -> Dict[str, Any]:
        payload = {name: getattr(self, name) for name in self.__dataclass_fields__ if name != "model"}
        payload["model"] = self.model.to_dict()
        return payload

    @classmethod
    def from_dict(cls, payload: Optional[Dict[str, Any]]) -> "TrainConfig":
        payload = dict(payload or {})
        model = ModelConfig.from_dict(payload.pop("model", None))
        known = {name for name in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(sorted(unknown))}")
        clip = payload.get("clip_norm", 10.0)
        return cls(
            epochs=int(payload.get("epochs", 200)),
            lr=float(payload.get("lr", 1e-4)),
            optimiser=str(payload.get("optimiser", "adam")).lower(),
            augment=bool(payload.get("augment", True)),
            seed=int(payload.get("seed", 0)),
            val_interval=int(payload.get("val_interval", 1)),
            clip_norm=None if clip is None else float(clip),
            accumulate=int(payload.get("accumulate", 1)),
            workers=int(payload.get("workers", 1)),
            record_timing=bool(payload.get("record_timing", True)),
            model=model,
        )

    @classmethod
    def from_yaml(cls, path: Path | str) -> "TrainConfig":
        return cls.from_dict(_load_yaml(path))


@dataclass(slots=True)
class DatasetConfig:
    count: int = 100
    seed: int = 0
    completeness_range: Tuple[float, float] = (0.3, 1.0)
    splits: Dict[str, float] = field(default_factory=lambda: {"train": 0.7, "val": 0.15, "test": 0.15})
    target_classes: Optional[List[str]] = None
    max_attempts: int = 20

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.count < 1:
            raise ConfigError("dataset.count must be >= 1")
        low, high = self.completeness_range
        if not (0.0 < low <= high <= 1.0):
            raise ConfigError("dataset.completeness_range must satisfy 0 < a <= b <= 1")
        if set(self.splits) - {"train", "val", "test"}:
            raise ConfigError("dataset.splits accepts only train/val/test")
        if any(value < 0 for value in self.splits.values()) or sum(self.splits.values()) <= 0:
            raise ConfigError("dataset.splits fractions must be non-negative with a positive sum")
        if self.max_attempts < 1:
            raise ConfigError("dataset.max_attempts must be >= 1")

    @classmethod
    def from_dict(cls, payload: Optional[Dict[str, Any]]) -> "DatasetConfig":
        payload = payload or {}
        targets = payload.get("target_classes")
        return cls(
            count=int(payload.get("count", 100)),
            seed=int(payload.get("seed", 0)),
            completeness_range=parse_range(payload.get("completeness_range", (0.3, 1.0)), "completeness_range"),
            splits={str(k): float(v) for k, v in (payload.get("splits") or {"train": 0.7, "val": 0.15, "test": 0.15}).items()},
            target_classes=[str(t) for t in targets] if targets else None,
            max_attempts=int(payload.get("max_attempts", 20)),
        )


@dataclass(slots=True)
class EvalConfig:
    thresholds: Tuple[float, ...] = DEFAULT_THRESHOLDS
    success_threshold: float = SUCCESS_THRESHOLD
    bin_width: float = DEFAULT_BIN_WIDTH
    workers: int = 1

    def __post_init__(self) -> None:
        self.thresholds = tuple(float(t) for t in self.thresholds)
        if not self.thresholds or any(not t > 0 for t in self.thresholds):
            raise ConfigError("eval.thresholds must be positive")
        if not 0 < self.bin_width <= 1:
            raise ConfigError("eval.bin_width must be in (0, 1]")
        if self.workers < 1:
            raise ConfigError("eval.workers must be >= 1")


def parse_floats(value: str, name: str) -> Tuple[float, ...]:
    try:
        return tuple(float(item) for item in value.split(",") if item.strip())
    except ValueError as exc:
        raise ConfigError(f"{name} must be a comma separated list of numbers") from exc


__all__ = [
    "ModelConfig",
    "TrainConfig",
    "DatasetConfig",
    "EvalConfig",
    "parse_relations",
    "parse_floats",
    "parse_range",
]
