"""Evaluation of a checkpoint on a dataset split."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

from ..checkpoint import load_checkpoint
from ..config import EvalConfig
from ..dscg import build_graph
from ..errors import ConfigError, ContractError
from ..evaluation import EvalRecord, EvalReport, build_report, centroid_baseline, lsr, make_record, write_report
from ..gnn import ModelParams, predict_with_offsets
from ..io import Filesystem
from ..knowledge import KnowledgeBase
from ..logger import LogTimer
from ..paths import ReportLayout
from ..scene import Dataset, PartialScene
from ..status import clear_done, is_done, mark_done

STEP_NAME = "eval"


def _evaluate_scene(scene: PartialScene, kb: KnowledgeBase, params: ModelParams) -> EvalRecord:
    graph = build_graph(scene, kb, params.config.relations)
    predicted, offsets = predict_with_offsets(graph, params)
    return make_record(scene, predicted, offsets)


def evaluate_model(
    *,
    fs: Filesystem,
    checkpoint_path: str,
    dataset_root: str,
    kb: KnowledgeBase,
    config: EvalConfig,
    layout: ReportLayout,
    split: str,
    force: bool,
    logger: logging.Logger,
) -> Optional[EvalReport]:
    if not force and is_done(fs, layout.root, STEP_NAME):
        logger.info("Evaluation skipped (already complete)", extra={"step": STEP_NAME, "extra_fields": {"root": layout.root}})
        return None

    if force:
        clear_done(fs, layout.root, STEP_NAME)

    params = load_checkpoint(checkpoint_path, fs=fs).params
    dataset = Dataset.load(dataset_root, fs=fs)
    scenes = [scene for scene in dataset.scenes(split) if scene.labelled]
    if not scenes:
        raise ContractError(f"split '{split}' holds no labelled scene")
    if scenes[0].dim != params.config.dim:
        raise ConfigError(f"model predicts {params.config.dim}D positions but the dataset is {scenes[0].dim}D")
    if kb.d_emb != params.config.d_emb:
        raise ConfigError(f"model expects {params.config.d_emb}-dimensional embeddings, knowledge base has {kb.d_emb}")

    with LogTimer(logger, "Evaluation completed", step=STEP_NAME, extra={"split": split}) as timer:
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                records: List[EvalRecord] = list(pool.map(lambda s: _evaluate_scene(s, kb, params), scenes))
        else:
            records = [_evaluate_scene(scene, kb, params) for scene in scenes]
        baseline = [make_record(scene, centroid_baseline(scene)) for scene in scenes]
        timer.counts = {"scenes": len(records), "successes": sum(r.success(config.success_threshold) for r in records)}
        report = build_report(
            records,
            config,
            metadata={
                "model": str(checkpoint_path),
                "split": split,
                "relations": list(params.config.relations),
                "centroid_baseline": {str(tau): lsr(baseline, tau) for tau in config.thresholds},
            },
        )
        write_report(report, report_path=layout.report, records_path=layout.records, bins_path=layout.bins, fs=fs)

    summary = {"scenes": len(records), "lsr": {str(tau): value for tau, value in report.lsr.items()}, "msle": report.msle}
    mark_done(fs, layout.root, STEP_NAME, summary)
    logger.info("Evaluation summary", extra={"step": STEP_NAME, "counts": {"scenes": len(records)}, "extra_fields": summary})
    return report


__all__ = ["evaluate_model"]
