import numpy as np
import pytest

from dscg_localizer.dscg import (
    DSCG,
    Edge,
    EdgeType,
    NodeKind,
    build_dsg,
    build_graph,
    edge_feature,
    enrich_commonsense,
    graph_stats,
    graph_to_dict,
)
from dscg_localizer.errors import ContractError
from dscg_localizer.scene import translate_scene


def test_dsg_counts_and_relpos(kb, make_scene) -> None:
    scene = make_scene([("desk", (1.0, 2.0)), ("bed", (4.0, 6.0)), ("sofa", (0.0, 0.0))])
    g = build_dsg(scene, kb)
    assert g.num_objects == 4
    assert len(g.edges) == 12
    assert g.nodes[g.target_index].kind is NodeKind.OBJECT_TARGET
    by_pair = {(e.src, e.dst): e for e in g.edges}
    assert by_pair[(0, 1)].relpos == (3.0, 4.0)
    assert by_pair[(1, 0)].relpos == (-3.0, -4.0)
    for edge in g.edges:
        if g.target_index in (edge.src, edge.dst):
            assert edge.target_flag == 1
            assert edge.relpos == (0.0, 0.0)
        else:
            reverse = by_pair[(edge.dst, edge.src)]
            assert all(a + b == 0.0 for a, b in zip(edge.relpos, reverse.relpos))


def test_enrich_without_relations_is_identity(kb, office_scene) -> None:
    g = build_dsg(office_scene, kb)
    assert enrich_commonsense(g, kb, []) is g


def test_shared_concept_is_deduplicated(kb, make_scene) -> None:
    # desk and chair both link to "office" through AtLocation
    scene = make_scene([("desk", (0.0, 0.0))], target_class="chair")
    g = build_graph(scene, kb, ["AtLocation"])
    office = [n.node_id for n in g.nodes if n.label == "office"]
    assert len(office) == 1
    touching = [e for e in g.edges if office[0] in (e.src, e.dst)]
    assert len(touching) == 4
    assert {(e.src, e.dst) for e in touching} == {(0, office[0]), (office[0], 0), (1, office[0]), (office[0], 1)}


def test_concept_nodes_follow_relations(kb, office_scene) -> None:
    at_location = build_graph(office_scene, kb, ["AtLocation"])
    both = build_graph(office_scene, kb, ["AtLocation", "UsedFor"])
    assert both.num_concepts > at_location.num_concepts > 0
    assert {e.etype for e in at_location.edges} == {EdgeType.PROXIMITY, EdgeType.AT_LOCATION}
    for edge in both.edges:
        assert both.nodes[edge.src].is_object or both.nodes[edge.dst].is_object
    assert len(both.nodes) == both.num_objects + both.num_concepts
    assert both.num_objects == len(office_scene.observed) + 1


@pytest.mark.parametrize(
    "edge, expected",
    [
        (Edge(0, 1, EdgeType.PROXIMITY, 0, (3.0, 4.0)), [1, 0, 0, 0, 3, 4]),
        (Edge(0, 5, EdgeType.AT_LOCATION, 0, (0.0, 0.0)), [0, 1, 0, 0, 0, 0]),
        (Edge(0, 5, EdgeType.USED_FOR, 0, (0.0, 0.0)), [0, 0, 1, 0, 0, 0]),
        (Edge(0, 2, EdgeType.PROXIMITY, 1, (0.0, 0.0)), [1, 0, 0, 1, 0, 0]),
    ],
)
def test_edge_feature_layout(edge, expected) -> None:
    np.testing.assert_array_equal(edge_feature(edge, 2), expected)


def test_edge_features_translation_invariant(kb, make_scene) -> None:
    scene = make_scene([("desk", (1.0, 2.0)), ("bed", (4.0, 6.0)), ("sofa", (0.5, 3.0))])
    before = build_graph(scene, kb, ["AtLocation", "UsedFor"]).arrays().edge_features
    after = build_graph(translate_scene(scene, (16.0, -8.0)), kb, ["AtLocation", "UsedFor"]).arrays().edge_features
    np.testing.assert_array_equal(before, after)


def test_three_dimensional_edges(kb, random_scene) -> None:
    g = build_graph(random_scene(1, count=3, dim=3), kb, ["UsedFor"])
    assert g.arrays().edge_features.shape[1] == 7


def test_graph_invariants_are_enforced(kb, office_scene) -> None:
    g = build_graph(office_scene, kb, ["AtLocation"])
    concepts = [n.node_id for n in g.nodes if n.kind is NodeKind.CONCEPT]
    with pytest.raises(ContractError):
        DSCG(nodes=g.nodes, edges=g.edges + (Edge(concepts[0], concepts[1], EdgeType.AT_LOCATION, 0, (0.0, 0.0)),), dim=2)
    with pytest.raises(ContractError):
        DSCG(nodes=g.nodes[:-1] + g.nodes[:1], edges=(), dim=2)


def test_relabel_keeps_structure(kb, office_scene) -> None:
    g = build_graph(office_scene, kb, ["AtLocation"])
    order = list(reversed(range(len(g.nodes))))
    h = g.relabel(order)
    assert h.nodes[0].label == g.nodes[-1].label
    assert h.target_index == len(g.nodes) - 1 - g.target_index
    assert len(h.edges) == len(g.edges)


def test_graph_dump(kb, office_scene) -> None:
    payload = graph_to_dict(build_graph(office_scene, kb, ["UsedFor"]))
    assert payload["dim"] == 2
    assert payload["nodes"][0] == {"id": 0, "kind": "ObjectObserved", "label": "desk"}
    assert all(len(edge["feature"]) == 6 for edge in payload["edges"])


def test_graph_stats(kb, office_scene, random_scene) -> None:
    graphs = [build_graph(office_scene, kb, ["AtLocation", "UsedFor"]), build_dsg(random_scene(2), kb)]
    stats = graph_stats(graphs)
    assert stats["graphs"] == 2
    assert stats["observed_objects"] == {"mean": 4.0, "min": 4, "max": 4}
    assert stats["concepts"]["min"] == 0
    assert stats["concept_to_object_ratio"] == pytest.approx(graphs[0].num_concepts / 10)
    with pytest.raises(ContractError):
        graph_stats([])
