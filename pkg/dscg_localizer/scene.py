"""Scene data model, JSON ingestion, synthetic layouts and partial-scene extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .constants import MANIFEST_FILE, SPLITS
from .errors import ContractError, ExtractionError, LayoutError, SceneValidationError
from .io import Filesystem, join_uri
from .knowledge import normalise_term

Position = Tuple[float, ...]


def _position(value: Any, dim: int, field_name: str) -> Position:
    if not isinstance(value, (list, tuple, np.ndarray)):
        raise SceneValidationError("position must be a list of numbers", field=field_name)
    try:
        coords = tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise SceneValidationError("position must be a list of numbers", field=field_name) from exc
    if len(coords) != dim:
        raise SceneValidationError(f"expected {dim} coordinates, got {len(coords)}", field=field_name)
    if not all(math.isfinite(c) for c in coords):
        raise SceneValidationError("coordinates must be finite", field=field_name)
    return coords


@dataclass(frozen=True, slots=True)
class SceneObject:
    instance_id: int
    class_label: str
    position: Position


def _check_objects(objects: Sequence[SceneObject], dim: int, field_name: str) -> None:
    seen = set()
    for i, obj in enumerate(objects):
        _position(obj.position, dim, f"{field_name}[{i}].position")
        if obj.instance_id in seen:
            raise SceneValidationError(f"duplicate instance_id {obj.instance_id}", field=f"{field_name}[{i}].instance_id")
        seen.add(obj.instance_id)


@dataclass(frozen=True, slots=True)
class FullScene:
    scene_id: str
    dim: int
    objects: Tuple[SceneObject, ...]

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise SceneValidationError("dim must be 2 or 3", field="dim")
        _check_objects(self.objects, self.dim, "objects")

    def instances_of(self, class_label: str) -> List[SceneObject]:
        key = normalise_term(class_label)
        return [obj for obj in self.objects if normalise_term(obj.class_label) == key]


@dataclass(frozen=True, slots=True)
class PartialScene:
    scene_id: str
    dim: int
    observed: Tuple[SceneObject, ...]
    target_class: str
    target_instances: Tuple[Position, ...]
    completeness: float = 1.0

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise SceneValidationError("dim must be 2 or 3", field="dim")
        if not self.observed:
            raise SceneValidationError("at least one observed object is required", field="observed")
        _check_objects(self.observed, self.dim, "observed")
        for i, position in enumerate(self.target_instances):
            _position(position, self.dim, f"target_instances[{i}]")
        if not self.target_class.strip():
            raise SceneValidationError("target class must be non-empty", field="target_class")
        if not 0.0 < self.completeness <= 1.0:
            raise SceneValidationError("completeness must lie in (0, 1]", field="completeness")

    @property
    def labelled(self) -> bool:
        return bool(self.target_instances)

    def observed_positions(self) -> np.ndarray:
        return np.array([obj.position for obj in self.observed], dtype=np.float64)

    def target_positions(self) -> np.ndarray:
        if not self.target_instances:
            return np.zeros((0, self.dim))
        return np.array(self.target_instances, dtype=np.float64)


# ---------------------------------------------------------------------------
# JSON ingestion


def scene_from_dict(payload: Mapping[str, Any]) -> PartialScene:
    if not isinstance(payload, Mapping):
        raise SceneValidationError("scene file must contain a JSON object", field="<root>")
    for key in ("scene_id", "dim", "observed", "target_class", "target_instances"):
        if key not in payload:
            raise SceneValidationError("missing required field", field=key)
    dim = payload["dim"]
    if dim not in (2, 3) or isinstance(dim, bool):
        raise SceneValidationError("dim must be 2 or 3", field="dim")
    dim = int(dim)
    observed_raw = payload["observed"]
    if not isinstance(observed_raw, list):
        raise SceneValidationError("must be a list", field="observed")
    observed = []
    for i, item in enumerate(observed_raw):
        if not isinstance(item, Mapping):
            raise SceneValidationError("must be an object", field=f"observed[{i}]")
        for key in ("instance_id", "class", "position"):
            if key not in item:
                raise SceneValidationError("missing required field", field=f"observed[{i}].{key}")
        if not isinstance(item["instance_id"], int) or isinstance(item["instance_id"], bool):
            raise SceneValidationError("must be an integer", field=f"observed[{i}].instance_id")
        if not isinstance(item["class"], str):
            raise SceneValidationError("must be a string", field=f"observed[{i}].class")
        observed.append(
            SceneObject(
                instance_id=item["instance_id"],
                class_label=item["class"],
                position=_position(item["position"], dim, f"observed[{i}].position"),
            )
        )
    targets_raw = payload["target_instances"]
    if not isinstance(targets_raw, list):
        raise SceneValidationError("must be a list", field="target_instances")
    targets = tuple(_position(p, dim, f"target_instances[{i}]") for i, p in enumerate(targets_raw))
    if not isinstance(payload["target_class"], str):
        raise SceneValidationError("must be a string", field="target_class")
    try:
        completeness = float(payload.get("completeness", 1.0))
    except (TypeError, ValueError) as exc:
        raise SceneValidationError("must be a number", field="completeness") from exc
    return PartialScene(
        scene_id=str(payload["scene_id"]),
        dim=dim,
        observed=tuple(observed),
        target_class=payload["target_class"],
        target_instances=targets,
        completeness=completeness,
    )


def scene_to_dict(scene: PartialScene) -> Dict[str, Any]:
    return {
        "scene_id": scene.scene_id,
        "dim": scene.dim,
        "observed": [
            {"instance_id": obj.instance_id, "class": obj.class_label, "position": list(obj.position)}
            for obj in scene.observed
        ],
        "target_class": scene.target_class,
        "target_instances": [list(p) for p in scene.target_instances],
        "completeness": scene.completeness,
    }


def load_scene(path: str | Path, *, fs: Optional[Filesystem] = None) -> PartialScene:
    fs = fs or Filesystem()
    try:
        payload = fs.read_json(path)
    except ValueError as exc:
        raise SceneValidationError(f"not valid JSON ({exc})", field="<root>") from exc
    return scene_from_dict(payload)


def save_scene(scene: PartialScene, path: str | Path, *, fs: Optional[Filesystem] = None) -> None:
    (fs or Filesystem()).write_json(path, scene_to_dict(scene))


# ---------------------------------------------------------------------------
# synthetic layouts


@dataclass(frozen=True, slots=True)
class PlacementRule:
    class_label: str
    count: Tuple[int, int] = (1, 1)
    anchor: Optional[str] = None
    radius: Tuple[float, float] = (0.0, 1.0)
    height: Tuple[float, float] = (0.0, 1.0)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any], index: int) -> "PlacementRule":
        where = f"rules[{index}]"
        if not isinstance(payload, Mapping) or "class" not in payload:
            raise LayoutError(f"{where}.class: missing required field")
        try:
            count = _int_range(payload.get("count", (1, 1)))
            radius = _float_range(payload.get("radius", (0.0, 1.0)))
            height = _float_range(payload.get("height", (0.0, 1.0)))
        except (TypeError, ValueError) as exc:
            raise LayoutError(f"{where}: {exc}") from exc
        if count[0] < 0 or count[0] > count[1]:
            raise LayoutError(f"{where}.count: expected 0 <= min <= max")
        if radius[0] < 0 or radius[0] > radius[1]:
            raise LayoutError(f"{where}.radius: expected 0 <= min <= max")
        if height[0] > height[1]:
            raise LayoutError(f"{where}.height: expected min <= max")
        anchor = payload.get("anchor")
        return cls(
            class_label=normalise_term(str(payload["class"])),
            count=count,
            anchor=normalise_term(str(anchor)) if anchor else None,
            radius=radius,
            height=height,
        )


def _int_range(value: Any) -> Tuple[int, int]:
    if isinstance(value, int):
        return value, value
    low, high = value
    return int(low), int(high)


def _float_range(value: Any) -> Tuple[float, float]:
    if isinstance(value, (int, float)):
        return 0.0, float(value)
    low, high = value
    return float(low), float(high)


@dataclass(frozen=True, slots=True)
class LayoutSpec:
    """Room extent plus ordered placement rules; anchors must precede dependants."""

    extent: Tuple[float, float]
    rules: Tuple[PlacementRule, ...]
    dim: int = 2
    min_separation: float = 0.3
    max_attempts: int = 200
    target_classes: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise LayoutError("dim: must be 2 or 3")
        if len(self.extent) != 2 or any(not e > 0 for e in self.extent):
            raise LayoutError("room.extent: two positive lengths required")
        if not self.rules:
            raise LayoutError("rules: at least one placement rule required")
        if self.min_separation < 0 or self.max_attempts < 1:
            raise LayoutError("min_separation must be >= 0 and max_attempts >= 1")
        minimum: Dict[str, int] = {}
        for i, rule in enumerate(self.rules):
            if rule.anchor is not None:
                if rule.anchor not in minimum:
                    raise LayoutError(f"rules[{i}].anchor: '{rule.anchor}' must be placed by an earlier rule")
                if rule.count[0] > 0 and minimum[rule.anchor] == 0:
                    raise LayoutError(f"rules[{i}].anchor: '{rule.anchor}' may be absent but '{rule.class_label}' is required")
            minimum[rule.class_label] = minimum.get(rule.class_label, 0) + rule.count[0]
        unknown = set(self.target_classes) - set(minimum)
        if unknown:
            raise LayoutError(f"target_classes: not placed by any rule: {', '.join(sorted(unknown))}")

    @property
    def classes(self) -> List[str]:
        return list(dict.fromkeys(rule.class_label for rule in self.rules))

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "LayoutSpec":
        if not isinstance(payload, Mapping):
            raise LayoutError("<root>: layout spec must be a mapping")
        room = payload.get("room")
        if not isinstance(room, Mapping) or "extent" not in room:
            raise LayoutError("room.extent: missing required field")
        rules_raw = payload.get("rules")
        if not isinstance(rules_raw, list):
            raise LayoutError("rules: must be a list")
        try:
            extent = tuple(float(v) for v in room["extent"])
            return cls(
                extent=extent,  # type: ignore[arg-type]
                rules=tuple(PlacementRule.from_dict(rule, i) for i, rule in enumerate(rules_raw)),
                dim=int(payload.get("dim", 2)),
                min_separation=float(payload.get("min_separation", 0.3)),
                max_attempts=int(payload.get("max_attempts", 200)),
                target_classes=tuple(normalise_term(str(t)) for t in payload.get("target_classes") or ()),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, LayoutError):
                raise
            raise LayoutError(f"<root>: {exc}") from exc

    @classmethod
    def from_yaml(cls, path: str | Path, *, fs: Optional[Filesystem] = None) -> "LayoutSpec":
        fs = fs or Filesystem()
        try:
            data = yaml.safe_load(fs.read_text(path))
        except yaml.YAMLError as exc:
            raise LayoutError(f"<root>: {path} is not valid YAML/JSON") from exc
        return cls.from_dict(data)


def _check_capacity(spec: LayoutSpec) -> None:
    required = sum(rule.count[0] for rule in spec.rules)
    footprint = math.pi * (spec.min_separation / 2.0) ** 2
    area = spec.extent[0] * spec.extent[1]
    if required * footprint > area:
        raise LayoutError(
            f"rules.count: {required} objects with separation {spec.min_separation} m exceed the room capacity"
        )


def _place_one(
    spec: LayoutSpec,
    rule: PlacementRule,
    placed: List[SceneObject],
    by_class: Dict[str, List[SceneObject]],
    rng: np.random.Generator,
) -> Optional[Position]:
    width, depth = spec.extent
    for _ in range(spec.max_attempts):
        if rule.anchor is not None:
            anchors = by_class[rule.anchor]
            anchor = anchors[int(rng.integers(len(anchors)))]
            radius = rng.uniform(rule.radius[0], rule.radius[1])
            angle = rng.uniform(0.0, 2.0 * math.pi)
            x = anchor.position[0] + radius * math.cos(angle)
            y = anchor.position[1] + radius * math.sin(angle)
        else:
            x = rng.uniform(0.0, width)
            y = rng.uniform(0.0, depth)
        z = rng.uniform(rule.height[0], rule.height[1]) if spec.dim == 3 else None
        if not (0.0 <= x <= width and 0.0 <= y <= depth):
            continue
        if any(math.hypot(x - o.position[0], y - o.position[1]) < spec.min_separation for o in placed):
            continue
        return (x, y) if z is None else (x, y, z)
    return None


def gen_scenes(spec: LayoutSpec, count: int, seed: int) -> List[FullScene]:
    """Sample ``count`` full scenes; scene ``i`` depends only on ``(spec, seed, i)``."""
    if count < 1:
        raise ContractError("count must be >= 1")
    _check_capacity(spec)
    scenes = []
    for index in range(count):
        rng = np.random.default_rng([seed, index])
        placed: List[SceneObject] = []
        by_class: Dict[str, List[SceneObject]] = {}
        for rule in spec.rules:
            if rule.anchor is not None and not by_class.get(rule.anchor):
                continue
            for _ in range(int(rng.integers(rule.count[0], rule.count[1] + 1))):
                position = _place_one(spec, rule, placed, by_class, rng)
                if position is None:
                    raise LayoutError(
                        f"rules.count: could not place '{rule.class_label}' after {spec.max_attempts} attempts"
                    )
                obj = SceneObject(instance_id=len(placed), class_label=rule.class_label, position=position)
                placed.append(obj)
                by_class.setdefault(rule.class_label, []).append(obj)
        scenes.append(FullScene(scene_id=f"scene_{seed}_{index:05d}", dim=spec.dim, objects=tuple(placed)))
    return scenes


def observed_count(completeness: float, total: int) -> int:
    """Round half up, keeping at least one observed object."""
    return max(1, int(math.floor(completeness * total + 0.5)))


def extract_partial(scene: FullScene, completeness: float, target_class: str, seed: int) -> PartialScene:
    """Observe a contiguous angular sector of the scene, hiding at least one target instance.

    Objects are ordered by their angle around a jittered viewpoint, counted
    from a random start direction; the first ``round(c * N)`` form the sweep.
    """
    if not 0.0 < completeness <= 1.0:
        raise ContractError("completeness must lie in (0, 1]")
    targets = scene.instances_of(target_class)
    if not targets:
        raise ContractError(f"scene {scene.scene_id} has no instance of '{target_class}'")
    rng = np.random.default_rng(seed)
    positions = np.array([obj.position[:2] for obj in scene.objects], dtype=np.float64)
    low, high = positions.min(axis=0), positions.max(axis=0)
    viewpoint = positions.mean(axis=0) + rng.uniform(-0.25, 0.25, size=2) * (high - low)
    start = rng.uniform(0.0, 2.0 * math.pi)
    offsets = positions - viewpoint
    angles = np.mod(np.arctan2(offsets[:, 1], offsets[:, 0]) - start, 2.0 * math.pi)
    ids = np.array([obj.instance_id for obj in scene.objects])
    order = np.lexsort((ids, angles))
    total = len(scene.objects)
    keep = observed_count(completeness, total)
    observed_ids = {int(ids[i]) for i in order[:keep]}
    hidden = tuple(obj.position for obj in targets if obj.instance_id not in observed_ids)
    if not hidden:
        raise ExtractionError(f"scene {scene.scene_id}: every '{target_class}' instance falls in the observed sweep")
    return PartialScene(
        scene_id=scene.scene_id,
        dim=scene.dim,
        observed=tuple(obj for obj in scene.objects if obj.instance_id in observed_ids),
        target_class=normalise_term(target_class),
        target_instances=hidden,
        completeness=keep / total,
    )


def _map_positions(scene: PartialScene, transform) -> PartialScene:
    observed = tuple(replace(obj, position=transform(obj.position)) for obj in scene.observed)
    return replace(
        scene,
        observed=observed,
        target_instances=tuple(transform(p) for p in scene.target_instances),
    )


def rotate_scene(scene: PartialScene, angle: float) -> PartialScene:
    """Rotate every position about the observed centroid (vertical axis in 3D)."""
    centroid = scene.observed_positions()[:, :2].mean(axis=0)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    cx, cy = float(centroid[0]), float(centroid[1])

    def transform(position: Position) -> Position:
        dx, dy = position[0] - cx, position[1] - cy
        rotated = (cx + cos_a * dx - sin_a * dy, cy + sin_a * dx + cos_a * dy)
        return rotated + tuple(position[2:])

    return _map_positions(scene, transform)


def translate_scene(scene: PartialScene, offset: Sequence[float]) -> PartialScene:
    if len(offset) != scene.dim:
        raise ContractError(f"offset needs {scene.dim} components")
    shift = tuple(float(v) for v in offset)
    return _map_positions(scene, lambda p: tuple(a + b for a, b in zip(p, shift)))


# ---------------------------------------------------------------------------
# datasets


@dataclass(slots=True)
class Dataset:
    """A directory of scene files plus a split manifest."""

    root: str
    manifest: Dict[str, Any]
    fs: Filesystem = field(default_factory=Filesystem)

    @classmethod
    def load(cls, root: str, *, fs: Optional[Filesystem] = None) -> "Dataset":
        fs = fs or Filesystem()
        path = join_uri(root, MANIFEST_FILE)
        if not fs.exists(path):
            raise FileNotFoundError(f"dataset manifest not found: {path}")
        manifest = fs.read_json(path)
        if not isinstance(manifest, dict) or any(not isinstance(manifest.get(split, []), list) for split in SPLITS):
            raise SceneValidationError("manifest must map train/val/test to lists of files", field="manifest")
        return cls(root=root, manifest=manifest, fs=fs)

    def files(self, split: str) -> List[str]:
        if split not in SPLITS:
            raise ContractError(f"unknown split '{split}'")
        return [str(name) for name in self.manifest.get(split, [])]

    def iter_scenes(self, split: str) -> Iterator[PartialScene]:
        for name in self.files(split):
            yield load_scene(join_uri(self.root, name), fs=self.fs)

    def scenes(self, split: str) -> List[PartialScene]:
        return list(self.iter_scenes(split))

    @property
    def dim(self) -> Optional[int]:
        for split in SPLITS:
            for scene in self.iter_scenes(split):
                return scene.dim
        return None


__all__ = [
    "SceneObject",
    "FullScene",
    "PartialScene",
    "PlacementRule",
    "LayoutSpec",
    "Dataset",
    "scene_from_dict",
    "scene_to_dict",
    "load_scene",
    "save_scene",
    "gen_scenes",
    "observed_count",
    "extract_partial",
    "rotate_scene",
    "translate_scene",
]
