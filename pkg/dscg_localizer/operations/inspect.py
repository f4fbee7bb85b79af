"""Graph and dataset inspection."""

from __future__ import annotations

import logging
from typing import Any, Dict, Iterable, Optional

from ..dscg import build_graph, graph_stats, graph_to_dict
from ..errors import ContractError, DscgError
from ..io import Filesystem
from ..knowledge import KnowledgeBase
from ..scene import Dataset, load_scene


def inspect_graph(
    *,
    fs: Filesystem,
    scene_path: str,
    kb: KnowledgeBase,
    relations: Iterable[str],
    out: Optional[str],
    logger: logging.Logger,
) -> Dict[str, Any]:
    scene = load_scene(scene_path, fs=fs)
    graph = build_graph(scene, kb, relations)
    payload = graph_to_dict(graph)
    if out:
        fs.write_json(out, payload)
    logger.info(
        "Graph built",
        extra={
            "step": "inspect_graph",
            "scene_id": scene.scene_id,
            "counts": {"nodes": len(graph.nodes), "edges": len(graph.edges), "concepts": graph.num_concepts},
        },
    )
    return payload


def dataset_graph_stats(
    *,
    fs: Filesystem,
    dataset_root: str,
    kb: KnowledgeBase,
    relations: Iterable[str],
    split: Optional[str],
    logger: logging.Logger,
) -> Dict[str, Any]:
    relations = tuple(relations)
    dataset = Dataset.load(dataset_root, fs=fs)
    splits = [split] if split else ["train", "val", "test"]
    graphs = []
    for name in splits:
        for scene in dataset.iter_scenes(name):
            try:
                graphs.append(build_graph(scene, kb, relations))
            except DscgError as exc:
                logger.warning(
                    "Scene skipped",
                    extra={"step": "graph_stats", "scene_id": scene.scene_id, "extra_fields": {"reason": str(exc)}},
                )
    if not graphs:
        raise ContractError("no scene in the selected split(s)")
    stats = graph_stats(graphs)
    stats["relations"] = list(relations)
    stats["splits"] = splits
    logger.info("Graph statistics", extra={"step": "graph_stats", "counts": {"graphs": len(graphs)}})
    return stats


__all__ = ["inspect_graph", "dataset_graph_stats"]
