"""Operations implemented by dscg_localizer."""

from .generate import assign_splits, generate_dataset
from .train import train_model
from .evaluate import evaluate_model
from .predict import predict_scene
from .inspect import dataset_graph_stats, inspect_graph

__all__ = [
    "generate_dataset",
    "assign_splits",
    "train_model",
    "evaluate_model",
    "predict_scene",
    "inspect_graph",
    "dataset_graph_stats",
]
