"""Sparse ReLU attention message passing over a D-SCG and the relative-position head."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from . import numcore as nc
from .config import ModelConfig
from .constants import LAYER_NORM_EPS, SCALE_NORM_EPS
from .dscg import DSCG, GraphArrays, build_graph
from .errors import ContractError
from .knowledge import KnowledgeBase
from .numcore import Tensor
from .scene import PartialScene

LAYER_FIELDS = (
    "W_q", "b_q", "W_k", "b_k", "W_v", "b_v", "W_e", "b_e",
    "W_g", "W_r", "b_r", "W_o", "b_o", "ln_gain", "ln_shift", "sn_gain",
)


@dataclass(frozen=True, slots=True)
class LayerParams:
    W_q: Tensor
    b_q: Tensor
    W_k: Tensor
    b_k: Tensor
    W_v: Tensor
    b_v: Tensor
    W_e: Tensor
    b_e: Tensor
    W_g: Tensor
    W_r: Tensor
    b_r: Tensor
    W_o: Tensor
    b_o: Tensor
    ln_gain: Tensor
    ln_shift: Tensor
    sn_gain: Tensor
    heads: int

    @property
    def d_in(self) -> int:
        return self.W_q.shape[1]

    @property
    def d_out(self) -> int:
        return self.W_q.shape[0]

    def __post_init__(self) -> None:
        expected = layer_shapes(self.d_in, self.d_out, self.W_e.shape[1])
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ContractError(f"layer parameter {name} has shape {actual}, expected {shape}")
        if self.heads < 1 or self.d_out % self.heads:
            raise ContractError(f"{self.heads} heads do not divide layer width {self.d_out}")


@dataclass(frozen=True, slots=True)
class ModelParams:
    config: ModelConfig
    seed: int
    layers: Tuple[LayerParams, ...]
    head_W: Tensor
    head_b: Tensor

    def named(self) -> Dict[str, Tensor]:
        """Every parameter keyed ``layers.<i>.<field>`` or ``head.W`` / ``head.b``, in a fixed order."""
        named: Dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            for name in LAYER_FIELDS:
                named[f"layers.{index}.{name}"] = getattr(layer, name)
        named["head.W"] = self.head_W
        named["head.b"] = self.head_b
        return named

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.value for name, tensor in self.named().items()}

    @classmethod
    def from_named(
        cls, config: ModelConfig, seed: int, values: Mapping[str, Tensor | np.ndarray]
    ) -> "ModelParams":
        shapes = parameter_shapes(config)
        if set(values) != set(shapes):
            missing = sorted(set(shapes) - set(values))
            extra = sorted(set(values) - set(shapes))
            raise ContractError(f"parameter names do not match the config (missing={missing}, unexpected={extra})")
        tensors: Dict[str, Tensor] = {}
        for name, shape in shapes.items():
            value = values[name]
            array = value.value if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
            if array.shape != shape:
                raise ContractError(f"parameter {name} has shape {array.shape}, expected {shape}")
            tensors[name] = Tensor(array, name=name)
        layers = tuple(
            LayerParams(
                **{name: tensors[f"layers.{index}.{name}"] for name in LAYER_FIELDS},
                heads=config.heads,
            )
            for index in range(config.layers)
        )
        return cls(config=config, seed=seed, layers=layers, head_W=tensors["head.W"], head_b=tensors["head.b"])

    def replace(self, values: Mapping[str, Tensor | np.ndarray]) -> "ModelParams":
        return ModelParams.from_named(self.config, self.seed, values)


@dataclass(frozen=True, slots=True)
class LayerTrace:
    """Post-ReLU attention weights of one layer, one row per edge, one column per head."""

    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True, slots=True)
class AttentionTrace:
    labels: Tuple[str, ...]
    target: int
    layers: Tuple[LayerTrace, ...]

    @property
    def heads(self) -> int:
        return int(self.layers[0].weights.shape[1]) if self.layers else 0

    def weights(self, layer: int, head: int) -> Dict[Tuple[int, int], float]:
        trace = self.layers[layer]
        return {
            (int(s), int(d)): float(w)
            for s, d, w in zip(trace.src, trace.dst, trace.weights[:, head])
        }

    def zero_fraction(self) -> float:
        total = sum(trace.weights.size for trace in self.layers)
        zeros = sum(int((trace.weights == 0.0).sum()) for trace in self.layers)
        return zeros / total if total else 0.0


def layer_shapes(d_in: int, d_out: int, edge_dim: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "W_q": (d_out, d_in),
        "b_q": (d_out,),
        "W_k": (d_out, d_in),
        "b_k": (d_out,),
        "W_v": (d_out, d_in),
        "b_v": (d_out,),
        "W_e": (d_out, edge_dim),
        "b_e": (d_out,),
        "W_g": (d_out, 3 * d_out),
        "W_r": (d_out, d_in),
        "b_r": (d_out,),
        "W_o": (d_out, d_out),
        "b_o": (d_out,),
        "ln_gain": (d_out,),
        "ln_shift": (d_out,),
        "sn_gain": (),
    }


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    shapes: Dict[str, Tuple[int, ...]] = {}
    for index, (d_in, d_out) in enumerate(config.layer_dims()):
        for name, shape in layer_shapes(d_in, d_out, config.edge_dim).items():
            shapes[f"layers.{index}.{name}"] = shape
    shapes["head.W"] = (config.dim, config.head_in())
    shapes["head.b"] = (config.dim,)
    return shapes


def init_model(config: ModelConfig, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases and shifts, unit gains."""
    config.validate()
    rng = np.random.default_rng(seed)
    values: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("W"):
            fan_out, fan_in = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-limit, limit, size=shape)
        elif leaf in ("ln_gain", "sn_gain"):
            values[name] = np.ones(shape)
        else:
            values[name] = np.zeros(shape)
    return ModelParams.from_named(config, seed, values)


def _as_arrays(graph: DSCG | GraphArrays) -> GraphArrays:
    return graph.arrays() if isinstance(graph, DSCG) else graph


def mp_layer(
    graph: DSCG | GraphArrays,
    H_in: Tensor,
    p: LayerParams,
    *,
    ln_eps: float = LAYER_NORM_EPS,
    sn_eps: float = SCALE_NORM_EPS,
    record: bool = False,
) -> Tuple[Tensor, Optional[LayerTrace]]:
    """One round of attentional message passing.

    Messages flow along edges ``src -> dst`` and are summed at ``dst``. Edges whose
    weight is zero for every head are dropped before aggregation, so removing them
    from the graph leaves the output unchanged.
    """
    arrays = _as_arrays(graph)
    n = arrays.num_nodes
    if H_in.ndim != 2 or H_in.shape != (n, p.d_in):
        raise ContractError(f"node features {H_in.shape} do not fit {n} nodes of width {p.d_in}")
    heads = p.heads

    R = nc.affine(p.W_r, p.b_r, H_in)
    message: Optional[Tensor] = None
    trace: Optional[LayerTrace] = None
    if arrays.num_edges:
        if arrays.edge_features.shape[1] != p.W_e.shape[1]:
            raise ContractError(
                f"edge features of width {arrays.edge_features.shape[1]} do not fit W_e {p.W_e.shape}"
            )
        Q = nc.affine(p.W_q, p.b_q, H_in)
        K = nc.affine(p.W_k, p.b_k, H_in)
        V = nc.affine(p.W_v, p.b_v, H_in)
        E = nc.affine(p.W_e, p.b_e, Tensor(arrays.edge_features))
        q_dst = nc.gather_rows(Q, arrays.dst)
        k_src = nc.add(nc.gather_rows(K, arrays.src), E)
        v_src = nc.add(nc.gather_rows(V, arrays.src), E)
        scores = nc.scale(nc.head_dot(q_dst, k_src, heads), 1.0 / math.sqrt(p.d_out / heads))
        alpha = nc.relu(scores)
        if record:
            trace = LayerTrace(src=arrays.src.copy(), dst=arrays.dst.copy(), weights=alpha.numpy())
        active = np.flatnonzero(alpha.value.any(axis=1))
        if active.size:
            weighted = nc.head_weight(nc.gather_rows(alpha, active), nc.gather_rows(v_src, active), heads)
            message = nc.scatter_add_rows(weighted, arrays.dst[active], n)
    elif record:
        trace = LayerTrace(
            src=np.zeros(0, dtype=np.int64), dst=np.zeros(0, dtype=np.int64), weights=np.zeros((0, heads))
        )

    U = nc.layer_norm(R if message is None else nc.add(R, message), p.ln_gain, p.ln_shift, ln_eps)
    beta = nc.sigmoid(nc.affine(p.W_g, None, nc.concat([U, R, nc.sub(U, R)])))
    gated = nc.add(U, nc.mul(beta, nc.sub(R, U)))
    H_out = nc.scale_norm(nc.affine(p.W_o, p.b_o, gated), p.sn_gain, sn_eps)
    return H_out, trace


def forward(
    g: DSCG, m: ModelParams, *, record_attention: bool = False
) -> Tuple[Tensor, Optional[AttentionTrace]]:
    """Relative position of the target seen from every observed object, one row per object."""
    arrays = g.arrays()
    if arrays.observed.size == 0:
        raise ContractError("forward needs at least one observed object")
    if g.dim != m.config.dim:
        raise ContractError(f"graph is {g.dim}D but the model predicts {m.config.dim}D offsets")
    X0 = Tensor(arrays.features)
    if X0.shape[1] != m.config.d_emb:
        raise ContractError(f"node features have width {X0.shape[1]}, model expects {m.config.d_emb}")

    H = X0
    traces: List[LayerTrace] = []
    for layer in m.layers:
        H, trace = mp_layer(
            arrays, H, layer, ln_eps=m.config.ln_eps, sn_eps=m.config.sn_eps, record=record_attention
        )
        if trace is not None:
            traces.append(trace)

    H_star = nc.concat([X0, H]) if m.config.concat_initial else H
    observed = nc.gather_rows(H_star, arrays.observed)
    target = nc.gather_rows(H_star, np.full(arrays.observed.size, arrays.target))
    offsets = nc.affine(m.head_W, m.head_b, nc.concat([observed, target]))

    attention = None
    if record_attention:
        attention = AttentionTrace(
            labels=tuple(node.label for node in g.nodes), target=arrays.target, layers=tuple(traces)
        )
    return offsets, attention


def aggregate_position(offsets: Tensor | np.ndarray, observed_positions: Tensor | np.ndarray) -> Tensor:
    """Mean over observed objects of ``position + predicted offset``."""
    offsets = offsets if isinstance(offsets, Tensor) else Tensor(offsets)
    positions = observed_positions if isinstance(observed_positions, Tensor) else Tensor(observed_positions)
    if offsets.ndim != 2 or offsets.shape != positions.shape:
        raise ContractError(f"offsets {offsets.shape} and positions {positions.shape} must be matching matrices")
    return nc.mean_rows(nc.add(positions, offsets))


def predict(
    scene: PartialScene,
    kb: KnowledgeBase,
    m: ModelParams,
    relations: Optional[Iterable[str]] = None,
    *,
    record_attention: bool = False,
) -> Tuple[np.ndarray, Optional[AttentionTrace]]:
    graph = build_graph(scene, kb, m.config.relations if relations is None else relations)
    offsets, attention = forward(graph, m, record_attention=record_attention)
    position = aggregate_position(offsets, graph.observed_positions())
    return position.numpy(), attention


def predict_with_offsets(
    graph: DSCG, m: ModelParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Absolute prediction plus the per-object offsets it was pooled from."""
    offsets, _ = forward(graph, m)
    return aggregate_position(offsets, graph.observed_positions()).numpy(), offsets.numpy()


__all__ = [
    "LAYER_FIELDS",
    "LayerParams",
    "ModelParams",
    "LayerTrace",
    "AttentionTrace",
    "layer_shapes",
    "parameter_shapes",
    "init_model",
    "mp_layer",
    "forward",
    "aggregate_position",
    "predict",
    "predict_with_offsets",
]
