"""Localisation metrics, completeness bins and report files."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .config import EvalConfig
from .errors import ContractError, SceneValidationError
from .io import Filesystem
from .scene import PartialScene

RECORD_COLUMNS = ("scene_id", "completeness", "error", "mppe", "predicted", "closest_instance")
BIN_COLUMNS = ("low", "high", "count", "mae")


@dataclass(frozen=True, slots=True)
class EvalRecord:
    scene_id: str
    predicted: Tuple[float, ...]
    instances: Tuple[Tuple[float, ...], ...]
    completeness: float
    error: float
    closest: int
    mppe: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.error >= 0:
            raise ContractError("record error must be non-negative")

    def success(self, tau: float) -> bool:
        return self.error <= tau

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scene_id": self.scene_id,
            "predicted": list(self.predicted),
            "instances": [list(p) for p in self.instances],
            "completeness": self.completeness,
            "error": self.error,
            "closest": self.closest,
            "mppe": self.mppe,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "EvalRecord":
        mppe_value = payload.get("mppe")
        return cls(
            scene_id=str(payload["scene_id"]),
            predicted=tuple(float(v) for v in payload["predicted"]),
            instances=tuple(tuple(float(v) for v in p) for p in payload["instances"]),
            completeness=float(payload["completeness"]),
            error=float(payload["error"]),
            closest=int(payload["closest"]),
            mppe=None if mppe_value is None else float(mppe_value),
        )


def closest_instance(predicted: Sequence[float], instances: np.ndarray) -> Tuple[int, float]:
    """Index of and distance to the nearest instance; ties go to the lowest index."""
    instances = np.asarray(instances, dtype=np.float64)
    if instances.ndim != 2 or instances.shape[0] == 0:
        raise ContractError("at least one target instance is required")
    distances = np.sqrt(((instances - np.asarray(predicted, dtype=np.float64)) ** 2).sum(axis=1))
    index = int(np.argmin(distances))
    return index, float(distances[index])


def mppe(offsets: np.ndarray, target_position: Sequence[float], observed_positions: np.ndarray) -> float:
    """Mean absolute difference between predicted and true object-to-target distances."""
    offsets = np.asarray(offsets, dtype=np.float64)
    positions = np.asarray(observed_positions, dtype=np.float64)
    if offsets.shape != positions.shape or offsets.ndim != 2:
        raise ContractError("offsets and observed positions must be aligned matrices")
    predicted = np.linalg.norm(offsets, axis=1)
    actual = np.linalg.norm(np.asarray(target_position, dtype=np.float64) - positions, axis=1)
    return float(np.mean(np.abs(predicted - actual)))


def make_record(
    scene: PartialScene,
    predicted: Sequence[float],
    offsets: Optional[np.ndarray] = None,
) -> EvalRecord:
    if not scene.labelled:
        raise ContractError(f"scene {scene.scene_id} has no ground-truth target instances")
    instances = scene.target_positions()
    index, error = closest_instance(predicted, instances)
    pairwise = None
    if offsets is not None:
        pairwise = mppe(offsets, instances[index], scene.observed_positions())
    return EvalRecord(
        scene_id=scene.scene_id,
        predicted=tuple(float(v) for v in predicted),
        instances=tuple(tuple(float(v) for v in row) for row in instances),
        completeness=float(scene.completeness),
        error=error,
        closest=index,
        mppe=pairwise,
    )


def lsr(records: Sequence[EvalRecord], tau: float) -> float:
    """Fraction of records localised within ``tau`` metres of some instance."""
    if not records:
        raise ContractError("lsr needs at least one record")
    return sum(record.success(tau) for record in records) / len(records)


def msle(records: Sequence[EvalRecord], tau: float) -> Optional[float]:
    """Mean error over the successes at ``tau``; ``None`` when nothing succeeded."""
    errors = [record.error for record in records if record.success(tau)]
    if not errors:
        return None
    return float(np.mean(errors))


def completeness_edges(width: float) -> List[float]:
    if not 0 < width <= 1:
        raise ContractError("bin width must be in (0, 1]")
    count = max(1, math.ceil(round(1.0 / width, 9)))
    return [round(min(k * width, 1.0), 10) for k in range(count)] + [1.0]


@dataclass(frozen=True, slots=True)
class BinSummary:
    low: float
    high: float
    count: int
    lsr: Dict[float, float] = field(default_factory=dict)
    mae: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "low": self.low,
            "high": self.high,
            "count": self.count,
            "lsr": {str(tau): value for tau, value in self.lsr.items()} if self.count else None,
            "mae": self.mae,
        }


def bin_by_completeness(
    records: Sequence[EvalRecord], edges: Sequence[float], thresholds: Sequence[float]
) -> List[BinSummary]:
    """Group records into half-open bins ``(e_k, e_k+1]`` and aggregate each bin."""
    edges_array = np.asarray(edges, dtype=np.float64)
    if edges_array.size < 2 or np.any(np.diff(edges_array) <= 0):
        raise ContractError("bin edges must be strictly increasing")
    if edges_array[0] > 0 or edges_array[-1] < 1:
        raise ContractError("bin edges must cover (0, 1]")
    members: List[List[EvalRecord]] = [[] for _ in range(edges_array.size - 1)]
    for record in records:
        if not 0 < record.completeness <= 1:
            raise SceneValidationError(
                f"completeness {record.completeness} of {record.scene_id} is outside (0, 1]", field="completeness"
            )
        index = int(np.searchsorted(edges_array, record.completeness, side="left")) - 1
        members[index].append(record)
    bins = []
    for k, group in enumerate(members):
        low, high = float(edges_array[k]), float(edges_array[k + 1])
        if not group:
            bins.append(BinSummary(low=low, high=high, count=0))
            continue
        bins.append(
            BinSummary(
                low=low,
                high=high,
                count=len(group),
                lsr={float(tau): lsr(group, tau) for tau in thresholds},
                mae=float(np.mean([record.error for record in group])),
            )
        )
    return bins


def centroid_baseline(scene: PartialScene) -> np.ndarray:
    """Mean observed position: the floor any learned model should beat."""
    positions = scene.observed_positions()
    if positions.shape[0] == 0:
        raise ContractError("centroid baseline needs at least one observed object")
    return positions.mean(axis=0)


@dataclass(slots=True)
class EvalReport:
    records: List[EvalRecord]
    thresholds: Tuple[float, ...]
    success_threshold: float
    bin_width: float
    lsr: Dict[float, float] = field(default_factory=dict)
    msle: Optional[float] = None
    mppe: Optional[float] = None
    bins: List[BinSummary] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "count": len(self.records),
            "thresholds": list(self.thresholds),
            "success_threshold": self.success_threshold,
            "bin_width": self.bin_width,
            "lsr": {str(tau): value for tau, value in self.lsr.items()},
            "msle": self.msle,
            "mppe": self.mppe,
            "bins": [summary.to_dict() for summary in self.bins],
            "records": [record.to_dict() for record in self.records],
            "metadata": self.metadata,
        }


def build_report(
    records: Sequence[EvalRecord], config: EvalConfig, *, metadata: Optional[Dict[str, Any]] = None
) -> EvalReport:
    records = list(records)
    if not records:
        raise ContractError("cannot build a report from zero records")
    pairwise = [record.mppe for record in records if record.mppe is not None]
    return EvalReport(
        records=records,
        thresholds=tuple(config.thresholds),
        success_threshold=config.success_threshold,
        bin_width=config.bin_width,
        lsr={tau: lsr(records, tau) for tau in config.thresholds},
        msle=msle(records, config.success_threshold),
        mppe=float(np.mean(pairwise)) if pairwise else None,
        bins=bin_by_completeness(records, completeness_edges(config.bin_width), config.thresholds),
        metadata=dict(metadata or {}),
    )


def report_from_dict(payload: Mapping[str, Any]) -> EvalReport:
    """Rebuild a report, aggregates included, from the per-record section of its JSON form."""
    config = EvalConfig(
        thresholds=tuple(payload["thresholds"]),
        success_threshold=float(payload["success_threshold"]),
        bin_width=float(payload["bin_width"]),
    )
    records = [EvalRecord.from_dict(item) for item in payload["records"]]
    return build_report(records, config, metadata=payload.get("metadata"))


def _format(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def records_csv(report: EvalReport) -> str:
    columns = [*RECORD_COLUMNS, *(f"success@{tau}" for tau in report.thresholds)]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for record in report.records:
        row = {
            "scene_id": record.scene_id,
            "completeness": _format(record.completeness),
            "error": _format(record.error),
            "mppe": _format(record.mppe),
            "predicted": " ".join(repr(v) for v in record.predicted),
            "closest_instance": " ".join(repr(v) for v in record.instances[record.closest]),
        }
        for tau in report.thresholds:
            row[f"success@{tau}"] = int(record.success(tau))
        writer.writerow(row)
    return buffer.getvalue()


def bins_csv(report: EvalReport) -> str:
    columns = [*BIN_COLUMNS, *(f"lsr@{tau}" for tau in report.thresholds)]
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for summary in report.bins:
        row = {"low": summary.low, "high": summary.high, "count": summary.count, "mae": _format(summary.mae)}
        for tau in report.thresholds:
            row[f"lsr@{tau}"] = _format(summary.lsr.get(tau))
        writer.writerow(row)
    return buffer.getvalue()


def write_report(
    report: EvalReport, *, report_path: str, records_path: str, bins_path: str, fs: Optional[Filesystem] = None
) -> None:
    fs = fs or Filesystem()
    fs.write_json(report_path, report.to_dict())
    fs.write_text(records_path, records_csv(report))
    fs.write_text(bins_path, bins_csv(report))


__all__ = [
    "EvalRecord",
    "EvalReport",
    "BinSummary",
    "closest_instance",
    "make_record",
    "lsr",
    "msle",
    "mppe",
    "completeness_edges",
    "bin_by_completeness",
    "centroid_baseline",
    "build_report",
    "report_from_dict",
    "records_csv",
    "bins_csv",
    "write_report",
]
