import math

import numpy as np
import pytest

from dscg_localizer import numcore as nc
from dscg_localizer.checkpoint import Checkpoint, decode_checkpoint, encode_checkpoint, export_attention, load_checkpoint, save_checkpoint
from dscg_localizer.config import ModelConfig
from dscg_localizer.dscg import EdgeType, GraphArrays, NodeKind, build_graph
from dscg_localizer.errors import CheckpointError, ConfigError
from dscg_localizer.gnn import (
    LAYER_FIELDS,
    LayerParams,
    ModelParams,
    aggregate_position,
    forward,
    init_model,
    mp_layer,
    parameter_shapes,
    predict,
)
from dscg_localizer.numcore import Tensor
from dscg_localizer.scene import translate_scene
from dscg_localizer.training import closest_instance_loss


def perturbed(config: ModelConfig, seed: int) -> ModelParams:
    """Model with every parameter (biases and gains included) drawn at random."""
    rng = np.random.default_rng(seed)
    values = {name: rng.normal(0.0, 0.5, size=shape) for name, shape in parameter_shapes(config).items()}
    return init_model(config, seed).replace(values)


def reference_layer(graph: GraphArrays, H: np.ndarray, p: LayerParams, ln_eps: float, sn_eps: float) -> np.ndarray:
    w = {name: getattr(p, name).value for name in LAYER_FIELDS}
    d_h = p.d_out // p.heads
    out = np.zeros((graph.num_nodes, p.d_out))
    for i in range(graph.num_nodes):
        r = w["W_r"] @ H[i] + w["b_r"]
        q = w["W_q"] @ H[i] + w["b_q"]
        message = np.zeros(p.d_out)
        for e in range(graph.num_edges):
            if graph.dst[e] != i:
                continue
            j = graph.src[e]
            edge = w["W_e"] @ graph.edge_features[e] + w["b_e"]
            k = w["W_k"] @ H[j] + w["b_k"] + edge
            v = w["W_v"] @ H[j] + w["b_v"] + edge
            for head in range(p.heads):
                part = slice(head * d_h, (head + 1) * d_h)
                alpha = max(float(q[part] @ k[part]) / math.sqrt(d_h), 0.0)
                message[part] += alpha * v[part]
        u = r + message
        u = (u - u.mean()) / math.sqrt(u.var() + ln_eps) * w["ln_gain"] + w["ln_shift"]
        beta = 1.0 / (1.0 + np.exp(-(w["W_g"] @ np.concatenate([u, r, u - r]))))
        o = w["W_o"] @ (beta * r + (1.0 - beta) * u) + w["b_o"]
        out[i] = float(w["sn_gain"]) * o / max(float(np.linalg.norm(o)), sn_eps)
    return out


def random_arrays(rng: np.random.Generator, nodes: int, d_in: int, edge_dim: int) -> GraphArrays:
    pairs = [(s, d) for s in range(nodes) for d in range(nodes) if s != d]
    keep = [pair for pair in pairs if rng.random() < 0.6]
    return GraphArrays(
        features=rng.normal(size=(nodes, d_in)),
        src=np.array([s for s, _ in keep], dtype=np.int64),
        dst=np.array([d for _, d in keep], dtype=np.int64),
        edge_features=rng.normal(size=(len(keep), edge_dim)) if keep else np.zeros((0, edge_dim)),
        observed=np.arange(nodes - 1),
        target=nodes - 1,
    )


def test_default_layer_widths() -> None:
    config = ModelConfig()
    assert config.layer_dims() == [(300, 256), (256, 512), (512, 512), (512, 512)]
    assert config.head_in() == 1624
    assert ModelConfig(concat_initial=False).head_in() == 1024


def test_heads_must_divide_widths() -> None:
    with pytest.raises(ConfigError):
        ModelConfig(heads=5)


def test_init_is_seeded(small_config) -> None:
    first, second = init_model(small_config, 3).arrays(), init_model(small_config, 3).arrays()
    assert first.keys() == second.keys()
    assert all(np.array_equal(first[k], second[k]) for k in first)
    other = init_model(small_config, 4).arrays()
    assert not np.array_equal(first["layers.0.W_q"], other["layers.0.W_q"])
    assert first["layers.1.sn_gain"] == 1.0
    assert not first["head.b"].any()


def test_layer_matches_reference() -> None:
    config = ModelConfig(d_emb=6, first_dim=8, layers=1, heads=2, dim=2)
    for seed in range(100):
        rng = np.random.default_rng(seed)
        layer = perturbed(config, seed).layers[0]
        graph = random_arrays(rng, 5, config.d_emb, config.edge_dim)
        H, _ = mp_layer(graph, Tensor(graph.features), layer, ln_eps=config.ln_eps, sn_eps=config.sn_eps)
        expected = reference_layer(graph, graph.features, layer, config.ln_eps, config.sn_eps)
        np.testing.assert_allclose(H.value, expected, atol=1e-10, rtol=0)


def test_isolated_node_uses_residual_path() -> None:
    config = ModelConfig(d_emb=6, first_dim=8, layers=1, heads=2, dim=2)
    layer = perturbed(config, 0).layers[0]
    rng = np.random.default_rng(0)
    graph = GraphArrays(
        features=rng.normal(size=(1, 6)),
        src=np.zeros(0, dtype=np.int64),
        dst=np.zeros(0, dtype=np.int64),
        edge_features=np.zeros((0, config.edge_dim)),
        observed=np.zeros(0, dtype=np.int64),
        target=0,
    )
    H, trace = mp_layer(graph, Tensor(graph.features), layer, record=True)
    np.testing.assert_allclose(H.value, reference_layer(graph, graph.features, layer, config.ln_eps, config.sn_eps), atol=1e-12)
    assert trace.weights.shape == (0, 2)


def test_all_zero_attention_equals_isolated_nodes(kb, office_scene, small_config) -> None:
    graph = build_graph(office_scene, kb, ["AtLocation"])
    params = init_model(small_config, 1)
    layer = params.layers[0]
    silent = LayerParams(**{**{f: getattr(layer, f) for f in LAYER_FIELDS}, "W_q": Tensor(np.zeros(layer.W_q.shape))}, heads=layer.heads)
    H0 = Tensor(graph.arrays().features)
    with_edges, trace = mp_layer(graph, H0, silent, record=True)
    without, _ = mp_layer(graph.with_edges([False] * len(graph.edges)), H0, silent)
    assert not trace.weights.any()
    np.testing.assert_array_equal(with_edges.value, without.value)


def test_forward_shape_and_determinism(kb, office_scene, small_config) -> None:
    params = init_model(small_config, 0)
    graph = build_graph(office_scene, kb, small_config.relations)
    offsets, trace = forward(graph, params)
    assert offsets.shape == (4, 2)
    assert trace is None
    first, _ = predict(office_scene, kb, params)
    second, _ = predict(office_scene, kb, params)
    np.testing.assert_array_equal(first, second)


def test_prediction_ignores_node_order(kb, office_scene, small_config) -> None:
    params = perturbed(small_config, 2)
    graph = build_graph(office_scene, kb, small_config.relations)
    order = np.random.default_rng(0).permutation(len(graph.nodes)).tolist()
    shuffled = graph.relabel(order)
    base = aggregate_position(forward(graph, params)[0], graph.observed_positions()).value
    moved = aggregate_position(forward(shuffled, params)[0], shuffled.observed_positions()).value
    np.testing.assert_allclose(base, moved, atol=1e-9)


@pytest.mark.parametrize(
    "offsets, positions, expected",
    [
        ([[1.0, 0.0], [0.0, 1.0]], [[0.0, 0.0], [2.0, 2.0]], [1.5, 1.5]),
        ([[0.5, -0.5, 1.0]], [[1.0, 1.0, 1.0]], [1.5, 0.5, 2.0]),
    ],
)
def test_aggregate_position(offsets, positions, expected) -> None:
    np.testing.assert_allclose(aggregate_position(np.array(offsets), np.array(positions)).value, expected)


@pytest.mark.parametrize("dim", [2, 3])
def test_translation_moves_prediction(kb, random_scene, dim) -> None:
    config = ModelConfig(d_emb=16, first_dim=8, layers=2, heads=2, dim=dim)
    params = perturbed(config, 7)
    rng = np.random.default_rng(dim)
    for seed in range(50):
        scene = random_scene(100 + seed, count=2 + seed % 5, dim=dim)
        shift = rng.uniform(-20.0, 20.0, size=dim)
        before, _ = predict(scene, kb, params)
        after, _ = predict(translate_scene(scene, tuple(shift)), kb, params)
        assert np.linalg.norm(after - (before + shift)) <= 1e-9, scene.scene_id


def test_dropping_silent_edges_changes_nothing(kb, random_scene, small_config) -> None:
    pruned = 0
    for seed in range(10):
        params = perturbed(small_config, seed)
        graph = build_graph(random_scene(seed, count=5), kb, small_config.relations)
        H0 = Tensor(graph.arrays().features)
        full, trace = mp_layer(graph, H0, params.layers[0], record=True)
        keep = trace.weights.any(axis=1)
        if keep.all():
            continue
        pruned += 1
        reduced, _ = mp_layer(graph.with_edges(keep.tolist()), H0, params.layers[0])
        np.testing.assert_array_equal(full.value, reduced.value)
    assert pruned > 0


def test_attention_is_sparse_and_non_negative(kb, office_scene, small_config) -> None:
    _, trace = predict(office_scene, kb, init_model(small_config, 0), record_attention=True)
    assert len(trace.layers) == small_config.layers
    assert trace.heads == small_config.heads
    assert all((layer.weights >= 0).all() for layer in trace.layers)
    assert trace.zero_fraction() > 0
    assert trace.labels[trace.target] == "chair"


def test_model_gradients_match_finite_differences(kb, make_scene) -> None:
    config = ModelConfig(d_emb=16, first_dim=16, layers=2, heads=2, dim=2)
    scene = make_scene([("refrigerator", (1.0, 2.0))], target_class="stove", targets=[(2.5, 1.25)])
    graph = build_graph(scene, kb, config.relations)
    assert sorted(n.label for n in graph.nodes if n.kind is NodeKind.CONCEPT) == ["cooking", "food", "kitchen", "storage"]
    assert len(graph.nodes) == 6
    assert {e.etype for e in graph.edges} == set(EdgeType)
    params = perturbed(config, 5)
    instances = np.array(scene.target_instances)

    def loss(named):
        model = ModelParams(
            config=config,
            seed=0,
            layers=tuple(
                LayerParams(**{f: named[f"layers.{i}.{f}"] for f in LAYER_FIELDS}, heads=config.heads)
                for i in range(config.layers)
            ),
            head_W=named["head.W"],
            head_b=named["head.b"],
        )
        offsets, _ = forward(graph, model)
        return closest_instance_loss(aggregate_position(offsets, graph.observed_positions()), instances)

    report = nc.grad_check(loss, params.arrays())
    assert len(report.checked) > 0.9 * sum(a.size for a in params.arrays().values())
    assert report.passed, report.failures[:3]


def test_checkpoint_round_trip(tmp_path, small_config) -> None:
    params = perturbed(small_config, 9)
    checkpoint = Checkpoint(
        params=params,
        epoch=4,
        optimiser="adam",
        optimiser_step=12,
        optimiser_arrays={"m.head.b": np.array([0.25, -1.0])},
        metadata={"note": "fixture"},
    )
    path = tmp_path / "model.ckpt"
    save_checkpoint(str(path), checkpoint)
    loaded = load_checkpoint(str(path))
    assert loaded.params.config == small_config
    assert loaded.epoch == 4 and loaded.optimiser == "adam" and loaded.optimiser_step == 12
    assert loaded.metadata == {"note": "fixture"}
    np.testing.assert_array_equal(loaded.optimiser_arrays["m.head.b"], [0.25, -1.0])
    for name, array in params.arrays().items():
        np.testing.assert_array_equal(loaded.params.arrays()[name], array)


def test_checkpoint_rejects_damage(small_config) -> None:
    data = encode_checkpoint(Checkpoint(params=init_model(small_config, 0)))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError):
        decode_checkpoint(data[:-8])
    with pytest.raises(CheckpointError):
        decode_checkpoint(data + b"\x00")


def test_missing_checkpoint(tmp_path) -> None:
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


def test_export_attention(kb, office_scene, small_config) -> None:
    _, trace = predict(office_scene, kb, init_model(small_config, 0), record_attention=True)
    payload = export_attention(trace)
    assert payload["target"] == "chair"
    assert len(payload["layers"]) == small_config.layers
    for layer in payload["layers"]:
        assert len(layer["heads"]) == small_config.heads
        for head in layer["heads"]:
            totals = {}
            for message in head["messages"]:
                totals[message["dst"]] = totals.get(message["dst"], 0.0) + message["weight"]
            for total in totals.values():
                assert total == pytest.approx(1.0) or total == 0.0
    focused = export_attention(trace, normalise=False, target_only=True)
    messages = [m for layer in focused["layers"] for head in layer["heads"] for m in head["messages"]]
    assert messages and all(m["dst_label"] == "chair" for m in messages)
