"""Synthetic dataset generation."""

from __future__ import annotations

import logging
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..config import DatasetConfig
from ..constants import SPLITS
from ..errors import ExtractionError, LayoutError
from ..io import Filesystem
from ..knowledge import normalise_term
from ..logger import LogTimer
from ..paths import DatasetLayout
from ..scene import FullScene, LayoutSpec, PartialScene, extract_partial, gen_scenes, save_scene
from ..status import clear_done, is_done, mark_done, read_done

STEP_NAME = "gen_scenes"


def _partial_view(
    scene: FullScene,
    index: int,
    candidates: Sequence[str],
    config: DatasetConfig,
    logger: logging.Logger,
) -> Optional[PartialScene]:
    rng = np.random.default_rng([config.seed, index, 1])
    present = [label for label in candidates if scene.instances_of(label)]
    total = len(scene.objects)
    low, high = config.completeness_range
    # observed counts whose exact completeness lies in the configured range
    keeps = [k for k in range(1, total) if low - 1e-12 <= k / total <= high + 1e-12]
    reason = None
    if not present:
        reason = "no target class present"
    elif not keeps:
        reason = f"no observed count of {total} objects falls in completeness range {low}:{high}"
    else:
        for _ in range(config.max_attempts):
            target = present[int(rng.integers(len(present)))]
            keep = keeps[int(rng.integers(len(keeps)))]
            try:
                return extract_partial(scene, keep / total, target, seed=int(rng.integers(2**31)))
            except ExtractionError:
                continue
        reason = f"every target instance stayed visible after {config.max_attempts} attempts"
    logger.warning(
        "Scene skipped", extra={"step": STEP_NAME, "scene_id": scene.scene_id, "extra_fields": {"reason": reason}}
    )
    return None


def assign_splits(names: Sequence[str], fractions: Mapping[str, float], seed: int) -> Dict[str, List[str]]:
    """Shuffle ``names`` with ``seed`` and cut the order by the cumulative split fractions."""
    total = sum(fractions.get(split, 0.0) for split in SPLITS)
    order = np.random.default_rng([seed, 2]).permutation(len(names))
    splits: Dict[str, List[str]] = {}
    start = 0
    cumulative = 0.0
    for split in SPLITS:
        cumulative += fractions.get(split, 0.0)
        end = len(names) if split == SPLITS[-1] else int(round(cumulative / total * len(names)))
        splits[split] = sorted(names[int(i)] for i in order[start:end])
        start = end
    return splits


def generate_dataset(
    *,
    fs: Filesystem,
    spec: LayoutSpec,
    config: DatasetConfig,
    layout: DatasetLayout,
    force: bool,
    logger: logging.Logger,
) -> Dict[str, Any]:
    if not force and is_done(fs, layout.root, STEP_NAME):
        logger.info("Scene generation skipped (already complete)", extra={"step": STEP_NAME})
        return read_done(fs, layout.root, STEP_NAME) or {}

    if force:
        clear_done(fs, layout.root, STEP_NAME)

    candidates = [normalise_term(label) for label in (config.target_classes or spec.target_classes or spec.classes)]
    unknown = sorted(set(candidates) - set(spec.classes))
    if unknown:
        raise LayoutError(f"target_classes: not placed by any rule: {', '.join(unknown)}")

    entries: Dict[str, Dict[str, Any]] = {}
    with LogTimer(
        logger,
        "Scene generation completed",
        step=STEP_NAME,
        extra={"count": config.count, "seed": config.seed, "root": layout.root},
    ) as timer:
        for index, full in enumerate(gen_scenes(spec, config.count, config.seed)):
            partial = _partial_view(full, index, candidates, config, logger)
            if partial is None:
                continue
            name = layout.scene_name(partial.scene_id)
            path = layout.scene_file(partial.scene_id)
            save_scene(partial, path, fs=fs)
            entries[name] = {
                "scene_id": partial.scene_id,
                "completeness": partial.completeness,
                "target_class": partial.target_class,
                "observed": len(partial.observed),
                "sha256": fs.compute_checksums(path).checksum_sha256,
            }
        if not entries:
            raise LayoutError("rules: no generated scene admits a partial view with a hidden target")
        splits = assign_splits(list(entries), config.splits, config.seed)
        timer.counts = {"written": len(entries), "skipped": config.count - len(entries)}
        fs.write_json(layout.manifest, {**splits, "scenes": entries})

    summary = {
        "scenes": len(entries),
        "skipped": config.count - len(entries),
        "seed": config.seed,
        "dim": spec.dim,
        "splits": {split: len(names) for split, names in splits.items()},
    }
    mark_done(fs, layout.root, STEP_NAME, summary)
    logger.info("Dataset written", extra={"step": STEP_NAME, "counts": summary["splits"]})
    return summary


__all__ = ["generate_dataset", "assign_splits"]
