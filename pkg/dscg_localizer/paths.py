"""Helpers for computing output layout paths."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .constants import MANIFEST_FILE, SCENES_DIRNAME
from .io import join_uri, parent_uri


@dataclass(slots=True)
class DatasetLayout:
    root: str

    def __post_init__(self) -> None:
        self.root = str(self.root).rstrip("/") or "/"

    @property
    def manifest(self) -> str:
        return join_uri(self.root, MANIFEST_FILE)

    @property
    def scenes_dir(self) -> str:
        return join_uri(self.root, SCENES_DIRNAME)

    def scene_name(self, scene_id: str) -> str:
        """Manifest entry (relative to the root) for a scene."""
        return f"{SCENES_DIRNAME}/{scene_id}.json"

    def scene_file(self, scene_id: str) -> str:
        return join_uri(self.root, self.scene_name(scene_id))


@dataclass(slots=True)
class TrainLayout:
    best: str
    checkpoints_dir: str
    log: str
    config: str

    @classmethod
    def from_output(cls, out: str | Path) -> "TrainLayout":
        out = str(out)
        base = join_uri(parent_uri(out), PurePosixPath(out.rstrip("/")).stem)
        return cls(
            best=out,
            checkpoints_dir=f"{base}_checkpoints",
            log=f"{base}_log.csv",
            config=f"{base}_config.json",
        )

    def epoch_checkpoint(self, epoch: int) -> str:
        return join_uri(self.checkpoints_dir, f"epoch_{epoch:04d}.ckpt")


@dataclass(slots=True)
class ReportLayout:
    root: str

    @property
    def report(self) -> str:
        return join_uri(self.root, "report.json")

    @property
    def records(self) -> str:
        return join_uri(self.root, "records.csv")

    @property
    def bins(self) -> str:
        return join_uri(self.root, "bins.csv")


__all__ = ["DatasetLayout", "TrainLayout", "ReportLayout"]
