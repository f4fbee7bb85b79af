"""Versioned binary checkpoints and attention trace export.

Layout: ``DSCGCKPT`` magic, little-endian uint32 header length, UTF-8 JSON
header, then every array listed in the header as raw little-endian float64 in
header order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from .config import ModelConfig
from .constants import CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MAGIC
from .errors import CheckpointError, ConfigError, ContractError
from .gnn import AttentionTrace, ModelParams
from .io import Filesystem

_LENGTH = struct.Struct("<I")
_FLOAT = np.dtype("<f8")
OPTIMISER_PREFIX = "optim."


@dataclass(slots=True)
class Checkpoint:
    params: ModelParams
    epoch: int = 0
    optimiser: Optional[str] = None
    optimiser_step: int = 0
    optimiser_arrays: Dict[str, np.ndarray] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    params = checkpoint.params
    arrays: Dict[str, np.ndarray] = dict(params.arrays())
    for name, array in checkpoint.optimiser_arrays.items():
        arrays[OPTIMISER_PREFIX + name] = np.asarray(array, dtype=np.float64)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": params.config.to_dict(),
        "seed": params.seed,
        "epoch": checkpoint.epoch,
        "optimiser": (
            {"kind": checkpoint.optimiser, "step": checkpoint.optimiser_step} if checkpoint.optimiser else None
        ),
        "metadata": checkpoint.metadata,
        "arrays": [{"name": name, "shape": list(array.shape)} for name, array in arrays.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, _LENGTH.pack(len(header_bytes)), header_bytes]
    chunks.extend(np.ascontiguousarray(array, dtype=_FLOAT).tobytes() for array in arrays.values())
    return b"".join(chunks)


def decode_checkpoint(data: bytes) -> Checkpoint:
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    if len(data) < offset + _LENGTH.size:
        raise CheckpointError("truncated checkpoint header")
    (length,) = _LENGTH.unpack_from(data, offset)
    offset += _LENGTH.size
    try:
        header = json.loads(data[offset : offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    offset += length
    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")

    arrays: Dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(int(extent) for extent in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * _FLOAT.itemsize
        if end > len(data):
            raise CheckpointError(f"checkpoint truncated inside array {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype=_FLOAT, count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after the last array")

    try:
        config = ModelConfig.from_dict(header["config"])
        params = ModelParams.from_named(
            config,
            int(header["seed"]),
            {name: array for name, array in arrays.items() if not name.startswith(OPTIMISER_PREFIX)},
        )
    except (KeyError, ConfigError, ContractError) as exc:
        raise CheckpointError(f"checkpoint does not describe a valid model: {exc}") from exc
    optimiser = header.get("optimiser") or {}
    return Checkpoint(
        params=params,
        epoch=int(header.get("epoch", 0)),
        optimiser=optimiser.get("kind"),
        optimiser_step=int(optimiser.get("step", 0)),
        optimiser_arrays={
            name[len(OPTIMISER_PREFIX) :]: array for name, array in arrays.items() if name.startswith(OPTIMISER_PREFIX)
        },
        metadata=dict(header.get("metadata") or {}),
    )


def save_checkpoint(path: str | Path, checkpoint: Checkpoint, *, fs: Optional[Filesystem] = None) -> None:
    fs = fs or Filesystem()
    fs.write_bytes(path, encode_checkpoint(checkpoint))


def load_checkpoint(path: str | Path, *, fs: Optional[Filesystem] = None) -> Checkpoint:
    fs = fs or Filesystem()
    if not fs.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode_checkpoint(fs.read_bytes(path))


def _normalised(weights: np.ndarray, dst: np.ndarray, nodes: int) -> np.ndarray:
    totals = np.zeros((nodes, weights.shape[1]))
    np.add.at(totals, dst, weights)
    per_edge = totals[dst]
    return np.divide(weights, per_edge, out=np.zeros_like(weights), where=per_edge > 0)


def export_attention(
    trace: AttentionTrace, *, normalise: bool = True, target_only: bool = False
) -> Dict[str, Any]:
    """Per layer and head, the weight of every message as ``(src_label, dst_label, weight)``.

    With ``normalise`` the weights arriving at each destination sum to one per head
    (destinations that received nothing stay at zero).
    """
    layers: List[Dict[str, Any]] = []
    for index, layer in enumerate(trace.layers):
        weights = _normalised(layer.weights, layer.dst, len(trace.labels)) if normalise else layer.weights
        keep = layer.dst == trace.target if target_only else np.ones(layer.dst.shape, dtype=bool)
        heads = []
        for head in range(weights.shape[1]):
            heads.append(
                {
                    "head": head,
                    "messages": [
                        {
                            "src": int(s),
                            "dst": int(d),
                            "src_label": trace.labels[s],
                            "dst_label": trace.labels[d],
                            "weight": float(w),
                        }
                        for s, d, w in zip(layer.src[keep], layer.dst[keep], weights[keep, head])
                    ],
                }
            )
        layers.append({"layer": index, "heads": heads})
    return {"normalised": normalise, "target": trace.labels[trace.target], "layers": layers}


__all__ = [
    "Checkpoint",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "export_attention",
]
