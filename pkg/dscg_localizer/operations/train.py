"""Model training operation."""

from __future__ import annotations

import logging
from typing import Optional, Tuple

from ..config import TrainConfig
from ..io import Filesystem
from ..knowledge import KnowledgeBase
from ..logger import LogTimer
from ..gnn import ModelParams
from ..paths import TrainLayout
from ..scene import Dataset
from ..training import TrainLog, train


def train_model(
    *,
    fs: Filesystem,
    config: TrainConfig,
    dataset_root: str,
    kb: KnowledgeBase,
    layout: TrainLayout,
    resume: Optional[str],
    logger: logging.Logger,
) -> Tuple[ModelParams, TrainLog]:
    dataset = Dataset.load(dataset_root, fs=fs)
    with LogTimer(
        logger,
        "Training completed",
        step="train",
        extra={
            "epochs": config.epochs,
            "optimiser": config.optimiser,
            "relations": list(config.model.relations),
            "layers": config.model.layers,
            "dim": config.model.dim,
            "out": layout.best,
        },
    ):
        params, log = train(dataset, kb, config, layout=layout, fs=fs, logger=logger, resume=resume)
    best = log.best
    logger.info(
        "Best checkpoint",
        extra={
            "step": "train",
            "epoch": best.epoch if best else (log.records[-1].epoch if log.records else None),
            "extra_fields": {"path": layout.best, "val_lsr": best.val_lsr if best else None},
        },
    )
    return params, log


__all__ = ["train_model"]
