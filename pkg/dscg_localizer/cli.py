"""Typer CLI entrypoint for dscg_localizer."""

from __future__ import annotations

import json
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

import typer

from .config import DatasetConfig, EvalConfig, TrainConfig, parse_floats, parse_range, parse_relations
from .constants import BUNDLED_EMBEDDINGS, BUNDLED_KB, BUNDLED_LAYOUT_2D, BUNDLED_LAYOUT_3D, SPLITS
from .errors import ConfigError, DscgError, NonFiniteError, NumericalError
from .io import Filesystem
from .knowledge import KnowledgeBase, load_kb
from .logger import get_logger
from .operations import dataset_graph_stats, evaluate_model, generate_dataset, inspect_graph, predict_scene, train_model
from .paths import DatasetLayout, ReportLayout, TrainLayout
from .scene import Dataset, LayoutSpec

app = typer.Typer(no_args_is_help=True, add_completion=False)
logger = get_logger()

EXIT_USAGE = 2
EXIT_NUMERIC = 3


@contextmanager
def exit_codes() -> Iterator[None]:
    """Translate package errors into the CLI's exit codes."""
    try:
        yield
    except (NumericalError, NonFiniteError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=EXIT_NUMERIC) from exc
    except (DscgError, FileNotFoundError) as exc:
        typer.echo(f"error: {exc}", err=True)
        raise typer.Exit(code=EXIT_USAGE) from exc


def echo_json(payload: Any) -> None:
    typer.echo(json.dumps(payload, indent=2, sort_keys=True))


def load_knowledge(fs: Filesystem, kb: str, emb: str) -> KnowledgeBase:
    return load_kb(kb, emb, fs=fs, logger=logger)


def resolve_train_config(
    *,
    config_path: Optional[Path],
    overrides: Dict[str, Any],
    model_overrides: Dict[str, Any],
) -> TrainConfig:
    """Flags override the YAML file, which overrides the defaults."""
    payload = TrainConfig.from_yaml(config_path).to_dict() if config_path else {}
    model = dict(payload.pop("model", {}))
    payload.update({key: value for key, value in overrides.items() if value is not None})
    model.update({key: value for key, value in model_overrides.items() if value is not None})
    payload["model"] = model
    return TrainConfig.from_dict(payload)


KB_OPTION = typer.Option(str(BUNDLED_KB), "--kb", help="Knowledge triples TSV")
EMB_OPTION = typer.Option(str(BUNDLED_EMBEDDINGS), "--emb", help="Word embeddings file (DIM header)")


@app.command("gen-scenes")
def cli_gen_scenes(
    out: str = typer.Option(..., "--out", help="Dataset output root"),
    spec: Optional[str] = typer.Option(None, "--spec", help="Layout spec (YAML or JSON); bundled layout by default"),
    dim_3d: bool = typer.Option(False, "--dim-3d/--dim-2d", help="Bundled layout to use when --spec is absent"),
    count: int = typer.Option(100, "--count", help="Number of scenes to generate"),
    seed: int = typer.Option(0, "--seed"),
    completeness_range: str = typer.Option("0.3:1.0", "--completeness-range", help="Observed fraction range a:b"),
    targets: Optional[str] = typer.Option(None, "--targets", help="Comma separated target classes"),
    max_attempts: int = typer.Option(20, "--max-attempts", help="Partial-view retries per scene"),
    force: bool = typer.Option(False, "--force", help="Re-run even if step is marked done"),
) -> None:
    with exit_codes():
        cfg = DatasetConfig(
            count=count,
            seed=seed,
            completeness_range=parse_range(completeness_range, "completeness_range"),
            target_classes=[t.strip() for t in targets.split(",") if t.strip()] if targets else None,
            max_attempts=max_attempts,
        )
        fs = Filesystem()
        layout_path = spec or str(BUNDLED_LAYOUT_3D if dim_3d else BUNDLED_LAYOUT_2D)
        layout_spec = LayoutSpec.from_yaml(layout_path, fs=fs)
        summary = generate_dataset(
            fs=fs,
            spec=layout_spec,
            config=cfg,
            layout=DatasetLayout(out),
            force=force,
            logger=logger,
        )
    echo_json(summary)


@app.command("train")
def cli_train(
    data: str = typer.Option(..., "--data", help="Dataset root"),
    out: str = typer.Option(..., "--out", help="Best checkpoint path"),
    config: Optional[Path] = typer.Option(None, "--config", "-c", help="Training configuration YAML"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    epochs: Optional[int] = typer.Option(None, "--epochs"),
    lr: Optional[float] = typer.Option(None, "--lr"),
    optimiser: Optional[str] = typer.Option(None, "--optimiser", help="adam or adafactor"),
    layers: Optional[int] = typer.Option(None, "--layers", help="Message passing layers"),
    heads: Optional[int] = typer.Option(None, "--heads", help="Attention heads per layer"),
    first_dim: Optional[int] = typer.Option(None, "--first-dim", help="Width of the first layer"),
    dim_3d: Optional[bool] = typer.Option(None, "--dim-3d/--dim-2d", help="Position dimension; inferred from data"),
    relations: Optional[str] = typer.Option(None, "--relations", help='Commonsense relations, e.g. "atloc,usedfor"; "" for none'),
    concat: Optional[bool] = typer.Option(None, "--concat/--no-concat", help="Concatenate initial features into the head"),
    augment: Optional[bool] = typer.Option(None, "--augment/--no-augment", help="Random rotation augmentation"),
    seed: Optional[int] = typer.Option(None, "--seed"),
    val_interval: Optional[int] = typer.Option(None, "--val-interval"),
    clip_norm: Optional[float] = typer.Option(None, "--clip-norm"),
    no_clip: bool = typer.Option(False, "--no-clip", help="Disable gradient clipping"),
    accumulate: Optional[int] = typer.Option(None, "--accumulate", help="Scenes per optimiser step"),
    workers: Optional[int] = typer.Option(None, "--workers", help="Gradient worker threads"),
    timing: Optional[bool] = typer.Option(None, "--timing/--no-timing", help="Record epoch durations in the log"),
    resume: Optional[str] = typer.Option(None, "--resume", help="Epoch checkpoint to resume from"),
) -> None:
    with exit_codes():
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        dim = Dataset.load(data, fs=fs).dim if dim_3d is None else (3 if dim_3d else 2)
        cfg = resolve_train_config(
            config_path=config,
            overrides={
                "epochs": epochs,
                "lr": lr,
                "optimiser": optimiser,
                "augment": augment,
                "seed": seed,
                "val_interval": val_interval,
                "clip_norm": clip_norm,
                "accumulate": accumulate,
                "workers": workers,
                "record_timing": timing,
            },
            model_overrides={
                "d_emb": knowledge.d_emb,
                "layers": layers,
                "heads": heads,
                "first_dim": first_dim,
                "dim": dim,
                "relations": None if relations is None else list(parse_relations(relations)),
                "concat_initial": concat,
            },
        )
        if no_clip:
            cfg.clip_norm = None
        layout = TrainLayout.from_output(out)
        _, log = train_model(
            fs=fs,
            config=cfg,
            dataset_root=data,
            kb=knowledge,
            layout=layout,
            resume=resume,
            logger=logger,
        )
    best = log.best
    echo_json(
        {
            "checkpoint": layout.best,
            "log": layout.log,
            "epochs": len(log.records),
            "best_epoch": best.epoch if best else (log.records[-1].epoch if log.records else None),
            "best_val_lsr": best.val_lsr if best else None,
        }
    )


@app.command("eval")
def cli_eval(
    model: str = typer.Option(..., "--model", help="Checkpoint path"),
    data: str = typer.Option(..., "--data", help="Dataset root"),
    out: str = typer.Option(..., "--out", help="Report directory"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    split: str = typer.Option("test", "--split"),
    thresholds: str = typer.Option("0.5,1,2,3", "--thresholds", help="LSR thresholds in metres"),
    success_threshold: float = typer.Option(1.0, "--success-threshold", help="Threshold used for mSLE"),
    bins: float = typer.Option(0.1, "--bins", help="Completeness bin width"),
    workers: int = typer.Option(1, "--workers", help="Parallel scene evaluation threads"),
    force: bool = typer.Option(False, "--force", help="Re-run even if step is marked done"),
) -> None:
    with exit_codes():
        cfg = EvalConfig(
            thresholds=parse_floats(thresholds, "thresholds"),
            success_threshold=success_threshold,
            bin_width=bins,
            workers=workers,
        )
        if split not in SPLITS:
            raise ConfigError(f"--split must be train, val or test, got '{split}'")
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        layout = ReportLayout(out)
        report = evaluate_model(
            fs=fs,
            checkpoint_path=model,
            dataset_root=data,
            kb=knowledge,
            config=cfg,
            layout=layout,
            split=split,
            force=force,
            logger=logger,
        )
    if report is None:
        echo_json({"report": layout.report, "skipped": True})
        return
    echo_json(
        {
            "report": layout.report,
            "scenes": len(report.records),
            "lsr": {str(tau): value for tau, value in report.lsr.items()},
            "msle": report.msle,
        }
    )


@app.command("predict")
def cli_predict(
    model: str = typer.Option(..., "--model", help="Checkpoint path"),
    scene: str = typer.Option(..., "--scene", help="Scene JSON file"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    attention: Optional[str] = typer.Option(None, "--attention", help="Write the attention trace to this JSON file"),
) -> None:
    with exit_codes():
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        result = predict_scene(
            fs=fs,
            checkpoint_path=model,
            scene_path=scene,
            kb=knowledge,
            relations=None,
            attention_path=attention,
            normalise=True,
            logger=logger,
        )
    echo_json(result)


@app.command("inspect-graph")
def cli_inspect_graph(
    scene: str = typer.Option(..., "--scene", help="Scene JSON file"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    relations: str = typer.Option("atloc,usedfor", "--relations", help='Commonsense relations; "" for none'),
    out: Optional[str] = typer.Option(None, "--out", help="Write the graph JSON here instead of stdout"),
) -> None:
    with exit_codes():
        chosen = parse_relations(relations)
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        payload = inspect_graph(fs=fs, scene_path=scene, kb=knowledge, relations=chosen, out=out, logger=logger)
    if out is None:
        echo_json(payload)


@app.command("inspect-attention")
def cli_inspect_attention(
    model: str = typer.Option(..., "--model", help="Checkpoint path"),
    scene: str = typer.Option(..., "--scene", help="Scene JSON file"),
    out: str = typer.Option(..., "--out", help="Attention trace JSON"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    raw: bool = typer.Option(False, "--raw", help="Keep unnormalised attention weights"),
    target_only: bool = typer.Option(False, "--target-only", help="Only messages arriving at the target node"),
) -> None:
    with exit_codes():
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        result = predict_scene(
            fs=fs,
            checkpoint_path=model,
            scene_path=scene,
            kb=knowledge,
            relations=None,
            attention_path=out,
            normalise=not raw,
            target_only=target_only,
            logger=logger,
        )
    echo_json(result)


@app.command("graph-stats")
def cli_graph_stats(
    data: str = typer.Option(..., "--data", help="Dataset root"),
    kb: str = KB_OPTION,
    emb: str = EMB_OPTION,
    relations: str = typer.Option("atloc,usedfor", "--relations", help='Commonsense relations; "" for none'),
    split: Optional[str] = typer.Option(None, "--split", help="Restrict to one split"),
) -> None:
    with exit_codes():
        chosen = parse_relations(relations)
        if split is not None and split not in SPLITS:
            raise ConfigError(f"--split must be train, val or test, got '{split}'")
        fs = Filesystem()
        knowledge = load_knowledge(fs, kb, emb)
        stats = dataset_graph_stats(
            fs=fs, dataset_root=data, kb=knowledge, relations=chosen, split=split, logger=logger
        )
    echo_json(stats)


__all__ = ["app", "exit_codes", "resolve_train_config"]
