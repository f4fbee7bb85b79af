"""Directed spatial graph and its commonsense expansion."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .constants import RELATION_NAMES
from .errors import ContractError
from .knowledge import KnowledgeBase, Relation, embed, normalise_term, query_concepts
from .scene import PartialScene


class NodeKind(str, Enum):
    OBJECT_OBSERVED = "ObjectObserved"
    OBJECT_TARGET = "ObjectTarget"
    CONCEPT = "Concept"


class EdgeType(str, Enum):
    PROXIMITY = "Proximity"
    AT_LOCATION = "AtLocation"
    USED_FOR = "UsedFor"

    @classmethod
    def for_relation(cls, relation: Relation) -> "EdgeType":
        return cls(relation.value)


# one-hot slot per edge type, in feature order
EDGE_TYPE_ORDER = (EdgeType.PROXIMITY, EdgeType.AT_LOCATION, EdgeType.USED_FOR)


@dataclass(frozen=True, slots=True)
class Node:
    node_id: int
    kind: NodeKind
    label: str
    feature: np.ndarray
    position: Optional[Tuple[float, ...]] = None

    @property
    def is_object(self) -> bool:
        return self.kind is not NodeKind.CONCEPT


@dataclass(frozen=True, slots=True)
class Edge:
    src: int
    dst: int
    etype: EdgeType
    target_flag: int
    relpos: Tuple[float, ...]


@dataclass(frozen=True, slots=True)
class GraphArrays:
    """Dense views of a graph consumed by the network."""

    features: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray
    observed: np.ndarray
    target: int

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.src.shape[0])


@dataclass(frozen=True, slots=True)
class DSCG:
    nodes: Tuple[Node, ...]
    edges: Tuple[Edge, ...]
    dim: int

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ContractError("graph dim must be 2 or 3")
        if [node.node_id for node in self.nodes] != list(range(len(self.nodes))):
            raise ContractError("node ids must equal their positions in the node list")
        if sum(node.kind is NodeKind.OBJECT_TARGET for node in self.nodes) != 1:
            raise ContractError("a graph holds exactly one target node")
        for edge in self.edges:
            if not (0 <= edge.src < len(self.nodes) and 0 <= edge.dst < len(self.nodes)) or edge.src == edge.dst:
                raise ContractError(f"invalid edge {edge.src}->{edge.dst}")
            src, dst = self.nodes[edge.src], self.nodes[edge.dst]
            if not src.is_object and not dst.is_object:
                raise ContractError("concept nodes never connect to each other")
            if (edge.etype is EdgeType.PROXIMITY) != (src.is_object and dst.is_object):
                raise ContractError("proximity edges connect object nodes; semantic edges touch a concept")

    @property
    def target_index(self) -> int:
        return next(node.node_id for node in self.nodes if node.kind is NodeKind.OBJECT_TARGET)

    @property
    def observed_indices(self) -> List[int]:
        return [node.node_id for node in self.nodes if node.kind is NodeKind.OBJECT_OBSERVED]

    @property
    def num_objects(self) -> int:
        return sum(node.is_object for node in self.nodes)

    @property
    def num_concepts(self) -> int:
        return len(self.nodes) - self.num_objects

    def observed_positions(self) -> np.ndarray:
        return np.array([self.nodes[i].position for i in self.observed_indices], dtype=np.float64)

    def arrays(self) -> GraphArrays:
        return GraphArrays(
            features=np.stack([node.feature for node in self.nodes]),
            src=np.array([edge.src for edge in self.edges], dtype=np.int64),
            dst=np.array([edge.dst for edge in self.edges], dtype=np.int64),
            edge_features=(
                np.stack([edge_feature(edge, self.dim) for edge in self.edges])
                if self.edges
                else np.zeros((0, 4 + self.dim))
            ),
            observed=np.array(self.observed_indices, dtype=np.int64),
            target=self.target_index,
        )

    def relabel(self, order: Sequence[int]) -> "DSCG":
        """Reorder nodes so that new node ``k`` is old node ``order[k]``; edges keep their order."""
        if sorted(order) != list(range(len(self.nodes))):
            raise ContractError("order must be a permutation of node ids")
        new_id = {old: new for new, old in enumerate(order)}
        nodes = tuple(
            Node(node_id=k, kind=self.nodes[old].kind, label=self.nodes[old].label,
                 feature=self.nodes[old].feature, position=self.nodes[old].position)
            for k, old in enumerate(order)
        )
        edges = tuple(
            Edge(new_id[e.src], new_id[e.dst], e.etype, e.target_flag, e.relpos) for e in self.edges
        )
        return DSCG(nodes=nodes, edges=edges, dim=self.dim)

    def with_edges(self, keep: Iterable[bool]) -> "DSCG":
        mask = list(keep)
        if len(mask) != len(self.edges):
            raise ContractError("edge mask length must equal the edge count")
        return DSCG(nodes=self.nodes, edges=tuple(e for e, k in zip(self.edges, mask) if k), dim=self.dim)


def edge_feature(edge: Edge, dim: int) -> np.ndarray:
    """``[onehot(Proximity, AtLocation, UsedFor), target_flag, relpos...]``, length ``4 + dim``."""
    feature = np.zeros(4 + dim)
    feature[EDGE_TYPE_ORDER.index(edge.etype)] = 1.0
    feature[3] = float(edge.target_flag)
    if edge.etype is EdgeType.PROXIMITY and not edge.target_flag:
        feature[4:] = edge.relpos
    return feature


def build_dsg(scene: PartialScene, kb: KnowledgeBase) -> DSCG:
    """One node per observed object plus the target; complete directed proximity edges."""
    nodes: List[Node] = [
        Node(
            node_id=i,
            kind=NodeKind.OBJECT_OBSERVED,
            label=normalise_term(obj.class_label),
            feature=embed(kb, obj.class_label),
            position=tuple(obj.position),
        )
        for i, obj in enumerate(scene.observed)
    ]
    target = len(nodes)
    nodes.append(
        Node(
            node_id=target,
            kind=NodeKind.OBJECT_TARGET,
            label=normalise_term(scene.target_class),
            feature=embed(kb, scene.target_class),
        )
    )
    zero = (0.0,) * scene.dim
    edges: List[Edge] = []
    for i in range(len(nodes)):
        for j in range(len(nodes)):
            if i == j:
                continue
            if target in (i, j):
                edges.append(Edge(i, j, EdgeType.PROXIMITY, 1, zero))
            else:
                relpos = tuple(b - a for a, b in zip(nodes[i].position, nodes[j].position))
                edges.append(Edge(i, j, EdgeType.PROXIMITY, 0, relpos))
    return DSCG(nodes=tuple(nodes), edges=tuple(edges), dim=scene.dim)


def enrich_commonsense(g: DSCG, kb: KnowledgeBase, relations: Iterable[Relation | str]) -> DSCG:
    """Add concept nodes for every object node and enabled relation, linked both ways."""
    enabled = {r if isinstance(r, Relation) else Relation.parse(r) for r in relations}
    if not enabled:
        return g
    ordered = [Relation(name) for name in RELATION_NAMES if Relation(name) in enabled]
    nodes = list(g.nodes)
    edges = list(g.edges)
    concept_ids: Dict[str, int] = {}
    zero = (0.0,) * g.dim
    for node in g.nodes:
        if not node.is_object:
            continue
        for relation in ordered:
            etype = EdgeType.for_relation(relation)
            for concept, _weight in query_concepts(kb, node.label, relation):
                if concept not in concept_ids:
                    concept_ids[concept] = len(nodes)
                    nodes.append(
                        Node(node_id=len(nodes), kind=NodeKind.CONCEPT, label=concept, feature=embed(kb, concept))
                    )
                cid = concept_ids[concept]
                edges.append(Edge(node.node_id, cid, etype, 0, zero))
                edges.append(Edge(cid, node.node_id, etype, 0, zero))
    return DSCG(nodes=tuple(nodes), edges=tuple(edges), dim=g.dim)


def build_graph(scene: PartialScene, kb: KnowledgeBase, relations: Iterable[Relation | str]) -> DSCG:
    return enrich_commonsense(build_dsg(scene, kb), kb, relations)


def graph_to_dict(g: DSCG) -> Dict[str, Any]:
    return {
        "dim": g.dim,
        "nodes": [{"id": n.node_id, "kind": n.kind.value, "label": n.label} for n in g.nodes],
        "edges": [
            {"src": e.src, "dst": e.dst, "feature": [float(v) for v in edge_feature(e, g.dim)]}
            for e in g.edges
        ],
    }


def _linked_concepts(g: DSCG, etype: EdgeType) -> int:
    return len({e.dst for e in g.edges if e.etype is etype and g.nodes[e.dst].kind is NodeKind.CONCEPT})


def graph_stats(graphs: Sequence[DSCG]) -> Dict[str, Any]:
    """Node-count summary over a set of graphs (mean/min/max per node category)."""
    if not graphs:
        raise ContractError("graph_stats needs at least one graph")
    columns: Mapping[str, List[int]] = {
        "observed_objects": [len(g.observed_indices) for g in graphs],
        "concepts": [g.num_concepts for g in graphs],
        "atlocation_concepts": [_linked_concepts(g, EdgeType.AT_LOCATION) for g in graphs],
        "usedfor_concepts": [_linked_concepts(g, EdgeType.USED_FOR) for g in graphs],
        "edges": [len(g.edges) for g in graphs],
    }
    summary: Dict[str, Any] = {"graphs": len(graphs)}
    for name, values in columns.items():
        summary[name] = {"mean": float(np.mean(values)), "min": int(min(values)), "max": int(max(values))}
    objects = sum(g.num_objects for g in graphs)
    summary["concept_to_object_ratio"] = sum(columns["concepts"]) / objects
    return summary


__all__ = [
    "NodeKind",
    "EdgeType",
    "EDGE_TYPE_ORDER",
    "Node",
    "Edge",
    "DSCG",
    "GraphArrays",
    "edge_feature",
    "build_dsg",
    "enrich_commonsense",
    "build_graph",
    "graph_to_dict",
    "graph_stats",
]
