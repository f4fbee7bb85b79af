"""Single-scene prediction with optional attention export."""

from __future__ import annotations

import logging
from typing import Any, Dict, Iterable, Optional

from ..checkpoint import export_attention, load_checkpoint
from ..errors import ConfigError
from ..evaluation import closest_instance
from ..gnn import predict
from ..io import Filesystem
from ..knowledge import KnowledgeBase, is_known_term
from ..scene import PartialScene, load_scene


def warn_unknown_terms(scene: PartialScene, kb: KnowledgeBase, logger: logging.Logger) -> None:
    labels = dict.fromkeys([obj.class_label for obj in scene.observed] + [scene.target_class])
    for label in labels:
        if not is_known_term(kb, label):
            logger.warning(
                "No embedding for term, using hashed fallback",
                extra={"step": "predict", "scene_id": scene.scene_id, "extra_fields": {"term": label}},
            )


def predict_scene(
    *,
    fs: Filesystem,
    checkpoint_path: str,
    scene_path: str,
    kb: KnowledgeBase,
    relations: Optional[Iterable[str]],
    attention_path: Optional[str],
    normalise: bool,
    target_only: bool = False,
    logger: logging.Logger,
) -> Dict[str, Any]:
    params = load_checkpoint(checkpoint_path, fs=fs).params
    scene = load_scene(scene_path, fs=fs)
    if scene.dim != params.config.dim:
        raise ConfigError(f"model predicts {params.config.dim}D positions but the scene is {scene.dim}D")
    if kb.d_emb != params.config.d_emb:
        raise ConfigError(f"model expects {params.config.d_emb}-dimensional embeddings, knowledge base has {kb.d_emb}")
    warn_unknown_terms(scene, kb, logger)

    position, trace = predict(scene, kb, params, relations, record_attention=attention_path is not None)
    result: Dict[str, Any] = {
        "scene_id": scene.scene_id,
        "target_class": scene.target_class,
        "predicted_position": [float(v) for v in position],
    }
    if scene.labelled:
        _, error = closest_instance(position, scene.target_positions())
        result["error"] = error
    if attention_path is not None and trace is not None:
        fs.write_json(attention_path, export_attention(trace, normalise=normalise, target_only=target_only))
        result["attention"] = str(attention_path)
    logger.info("Prediction", extra={"step": "predict", "scene_id": scene.scene_id, "extra_fields": result})
    return result


__all__ = ["predict_scene", "warn_unknown_terms"]
