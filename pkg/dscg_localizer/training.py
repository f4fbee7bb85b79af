"""Closest-instance loss and the per-scene training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import numcore as nc
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .constants import SUCCESS_THRESHOLD
from .dscg import DSCG, build_graph
from .errors import ConfigError, ContractError, DscgError, NonFiniteError, NumericalError
from .evaluation import lsr, make_record
from .gnn import ModelParams, aggregate_position, forward, init_model
from .io import Filesystem
from .knowledge import KnowledgeBase
from .logger import get_logger
from .numcore import GradTape, Tensor
from .optim import OptimiserState, clip_gradients, init_state, optimiser_step
from .paths import TrainLayout
from .scene import Dataset, PartialScene, rotate_scene

LOG_COLUMNS = ("epoch", "loss", "val_lsr", "seconds")


def closest_instance_loss(predicted: Tensor, instances: np.ndarray | Sequence[Sequence[float]]) -> Tensor:
    """Squared distance to the nearest instance; the gradient only reaches that instance.

    Ties go to the lowest index.
    """
    instances = np.asarray(instances, dtype=np.float64)
    if instances.ndim != 2 or instances.shape[0] == 0:
        raise ContractError("at least one target instance is required")
    if predicted.shape != (instances.shape[1],):
        raise ContractError(f"prediction {predicted.shape} does not match {instances.shape[1]}D instances")
    squared = ((instances - predicted.value) ** 2).sum(axis=1)
    nearest = int(np.argmin(squared))
    return nc.sum_squares(nc.sub(predicted, Tensor(instances[nearest])))


def graph_loss(graph: DSCG, params: ModelParams, instances: np.ndarray) -> Tensor:
    offsets, _ = forward(graph, params)
    return closest_instance_loss(aggregate_position(offsets, graph.observed_positions()), instances)


def scene_gradients(
    graph: DSCG, params: ModelParams, instances: np.ndarray
) -> Tuple[float, Dict[str, Tensor]]:
    """Loss value and the gradient of every named parameter, on a private tape."""
    with GradTape() as tape:
        for name, tensor in params.named().items():
            tape.watch(name, tensor)
        loss = graph_loss(graph, params, instances)
    return loss.item(), nc.backward(tape, loss)


@dataclass(slots=True)
class EpochRecord:
    epoch: int
    loss: float
    val_lsr: Optional[float] = None
    seconds: Optional[float] = None


@dataclass(slots=True)
class TrainLog:
    records: List[EpochRecord] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ContractError("epoch indices must increase")
        self.records.append(record)

    @property
    def best(self) -> Optional[EpochRecord]:
        scored = [r for r in self.records if r.val_lsr is not None]
        if not scored:
            return None
        # first epoch reaching the maximum
        return max(scored, key=lambda r: (r.val_lsr, -r.epoch))

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=LOG_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for record in self.records:
            writer.writerow(
                {
                    "epoch": record.epoch,
                    "loss": repr(record.loss),
                    "val_lsr": "" if record.val_lsr is None else repr(record.val_lsr),
                    "seconds": "" if record.seconds is None else f"{record.seconds:.3f}",
                }
            )
        return buffer.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        log = cls()
        for row in csv.DictReader(io.StringIO(text)):
            log.append(
                EpochRecord(
                    epoch=int(row["epoch"]),
                    loss=float(row["loss"]),
                    val_lsr=float(row["val_lsr"]) if row["val_lsr"] else None,
                    seconds=float(row["seconds"]) if row["seconds"] else None,
                )
            )
        return log


@dataclass(slots=True)
class _Sample:
    scene: PartialScene
    graph: DSCG


def _prepare(
    scene: PartialScene,
    kb: KnowledgeBase,
    relations: Iterable[str],
    logger: logging.Logger,
    *,
    epoch: Optional[int] = None,
) -> Optional[_Sample]:
    if not scene.labelled:
        logger.warning(
            "Scene skipped",
            extra={"step": "train", "scene_id": scene.scene_id, "epoch": epoch,
                   "extra_fields": {"reason": "no target instances"}},
        )
        return None
    try:
        graph = build_graph(scene, kb, relations)
    except DscgError as exc:
        logger.warning(
            "Scene skipped",
            extra={"step": "train", "scene_id": scene.scene_id, "epoch": epoch, "extra_fields": {"reason": str(exc)}},
        )
        return None
    return _Sample(scene=scene, graph=graph)


def _gradients(sample: _Sample, params: ModelParams) -> Tuple[float, Dict[str, Tensor]]:
    try:
        return scene_gradients(sample.graph, params, sample.scene.target_positions())
    except NonFiniteError as exc:
        raise NumericalError(f"non-finite loss on scene {sample.scene.scene_id}: {exc}") from exc


def validation_lsr(samples: Sequence[_Sample], params: ModelParams, tau: float = SUCCESS_THRESHOLD) -> float:
    records = []
    for sample in samples:
        offsets, _ = forward(sample.graph, params)
        predicted = aggregate_position(offsets, sample.graph.observed_positions())
        records.append(make_record(sample.scene, predicted.value))
    return lsr(records, tau)


def _check_compatible(dataset_dim: Optional[int], kb: KnowledgeBase, config: TrainConfig) -> None:
    if dataset_dim is not None and dataset_dim != config.model.dim:
        raise ConfigError(f"dataset scenes are {dataset_dim}D but the model is configured for {config.model.dim}D")
    if kb.d_emb != config.model.d_emb:
        raise ConfigError(f"embeddings have dimension {kb.d_emb} but model.d_emb is {config.model.d_emb}")


def train(
    dataset: Dataset,
    kb: KnowledgeBase,
    config: TrainConfig,
    *,
    layout: Optional[TrainLayout] = None,
    fs: Optional[Filesystem] = None,
    logger: Optional[logging.Logger] = None,
    resume: Optional[str] = None,
) -> Tuple[ModelParams, TrainLog]:
    """Train on the ``train`` split, keeping the parameters with the best validation LSR@1m.

    Each epoch draws its shuffle and rotation angles from ``default_rng([seed, epoch])``,
    so a resumed run replays the same trajectory.
    """
    fs = fs or Filesystem()
    logger = logger or get_logger()
    config.validate()

    train_scenes = dataset.scenes("train")
    if not train_scenes:
        raise ContractError("the train split is empty")
    _check_compatible(train_scenes[0].dim, kb, config)
    relations = config.model.relations
    validation = [s for s in (_prepare(scene, kb, relations, logger) for scene in dataset.scenes("val")) if s]

    params = init_model(config.model, config.seed)
    state = init_state(config.optimiser)
    best_params, best_lsr = params, None
    log = TrainLog()
    start = 1
    if resume:
        checkpoint = load_checkpoint(resume, fs=fs)
        if checkpoint.params.config != config.model:
            raise ConfigError("resume checkpoint was trained with a different model configuration")
        if checkpoint.optimiser != config.optimiser:
            raise ConfigError(f"resume checkpoint holds {checkpoint.optimiser!r} state, config asks for {config.optimiser!r}")
        params = checkpoint.params
        state = OptimiserState(kind=checkpoint.optimiser, step=checkpoint.optimiser_step, slots=checkpoint.optimiser_arrays)
        start = checkpoint.epoch + 1
        best_lsr = checkpoint.metadata.get("best_val_lsr")
        best_params = params
        if layout is not None:
            if fs.exists(layout.best):
                best_params = load_checkpoint(layout.best, fs=fs).params
            if fs.exists(layout.log):
                previous = TrainLog.from_csv(fs.read_text(layout.log))
                log.records = [r for r in previous.records if r.epoch <= checkpoint.epoch]
        logger.info("Training resumed", extra={"step": "train", "epoch": checkpoint.epoch, "extra_fields": {"path": resume}})

    if layout is not None:
        fs.write_json(layout.config, config.to_dict())

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        for epoch in range(start, config.epochs + 1):
            started = time.perf_counter()
            rng = np.random.default_rng([config.seed, epoch])
            order = rng.permutation(len(train_scenes))
            angles = rng.uniform(0.0, 2.0 * math.pi, size=len(order)) if config.augment else None

            losses: List[float] = []
            for offset in range(0, len(order), config.accumulate):
                batch = []
                for k in range(offset, min(offset + config.accumulate, len(order))):
                    scene = train_scenes[int(order[k])]
                    if angles is not None:
                        scene = rotate_scene(scene, float(angles[k]))
                    sample = _prepare(scene, kb, relations, logger, epoch=epoch)
                    if sample is not None:
                        batch.append(sample)
                if not batch:
                    continue
                if pool is not None:
                    results = list(pool.map(lambda s: _gradients(s, params), batch))
                else:
                    results = [_gradients(sample, params) for sample in batch]
                grads = nc.merge_gradients([g for _, g in results])
                grads, _ = clip_gradients(grads, config.clip_norm)
                params, state = optimiser_step(params, grads, state, config.lr)
                losses.extend(loss for loss, _ in results)
            if not losses:
                raise ContractError(f"epoch {epoch}: no training scene produced a graph")
            mean_loss = float(np.mean(losses))
            if not math.isfinite(mean_loss):
                raise NumericalError(f"epoch {epoch}: training loss is not finite")

            scheduled = epoch % config.val_interval == 0 or epoch == config.epochs
            val_lsr = validation_lsr(validation, params) if validation and scheduled else None
            seconds = time.perf_counter() - started if config.record_timing else None
            log.append(EpochRecord(epoch=epoch, loss=mean_loss, val_lsr=val_lsr, seconds=seconds))
            logger.info(
                "Epoch finished",
                extra={
                    "step": "train",
                    "epoch": epoch,
                    "counts": {"scenes": len(losses)},
                    "extra_fields": {"loss": mean_loss, "val_lsr": val_lsr},
                },
            )

            improved = (not validation and scheduled) or (
                val_lsr is not None and (best_lsr is None or val_lsr > best_lsr)
            )
            if improved:
                best_params, best_lsr = params, val_lsr
            if layout is not None and scheduled:
                path = layout.epoch_checkpoint(epoch)
                save_checkpoint(
                    path,
                    Checkpoint(
                        params=params,
                        epoch=epoch,
                        optimiser=state.kind,
                        optimiser_step=state.step,
                        optimiser_arrays=state.slots,
                        metadata={"best_val_lsr": best_lsr},
                    ),
                    fs=fs,
                )
                log.checkpoints.append(path)
                if improved:
                    save_checkpoint(layout.best, Checkpoint(params=params, epoch=epoch, metadata={"val_lsr": val_lsr}), fs=fs)
                fs.write_text(layout.log, log.to_csv())
                logger.info(
                    "Checkpoint saved",
                    extra={"step": "train", "epoch": epoch, "extra_fields": {"path": path, "best": improved}},
                )
    finally:
        if pool is not None:
            pool.shutdown()

    if layout is not None:
        fs.write_text(layout.log, log.to_csv())
    return best_params, log


__all__ = [
    "closest_instance_loss",
    "graph_loss",
    "scene_gradients",
    "validation_lsr",
    "EpochRecord",
    "TrainLog",
    "train",
]
