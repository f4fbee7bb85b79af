import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from dscg_localizer.cli import app, resolve_train_config
from dscg_localizer.scene import load_scene

runner = CliRunner()

TINY_MODEL = ["--first-dim", "8", "--layers", "1", "--heads", "2", "--epochs", "2", "--no-timing"]


def gen(out: Path, *extra: str):
    return runner.invoke(app, ["gen-scenes", "--out", str(out), "--count", "8", "--seed", "4", *extra])


def trained_model(tmp_path: Path) -> tuple:
    data = tmp_path / "rooms"
    assert gen(data).exit_code == 0
    model = tmp_path / "models" / "best.ckpt"
    result = runner.invoke(app, ["train", "--data", str(data), "--out", str(model), *TINY_MODEL])
    assert result.exit_code == 0, result.output
    return data, model, json.loads(result.stdout)


def first_scene(data: Path) -> Path:
    return sorted((data / "scenes").glob("*.json"))[0]


def test_gen_scenes_is_reproducible(tmp_path: Path) -> None:
    first, second = gen(tmp_path / "a"), gen(tmp_path / "b")
    assert first.exit_code == 0 and second.exit_code == 0
    assert json.loads(first.stdout) == json.loads(second.stdout)
    for path in sorted((tmp_path / "a" / "scenes").glob("*.json")):
        assert path.read_bytes() == (tmp_path / "b" / "scenes" / path.name).read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_gen_scenes_respects_completeness_range(tmp_path: Path) -> None:
    result = gen(tmp_path / "rooms", "--completeness-range", "0.4:0.6")
    assert result.exit_code == 0, result.output
    for path in (tmp_path / "rooms" / "scenes").glob("*.json"):
        assert 0.4 <= load_scene(str(path)).completeness <= 0.6


def test_gen_scenes_second_run_is_skipped(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    again = gen(tmp_path / "rooms")
    assert again.exit_code == 0
    assert json.loads(again.stdout)["seed"] == 4


def test_gen_scenes_three_dimensional(tmp_path: Path) -> None:
    result = gen(tmp_path / "rooms", "--dim-3d")
    assert result.exit_code == 0, result.output
    assert json.loads(result.stdout)["dim"] == 3


def test_invalid_layout_exits_with_usage_error(tmp_path: Path) -> None:
    spec = tmp_path / "bad.yaml"
    spec.write_text("room:\n  extent: [4.0, 4.0]\nrules:\n  - count: 2\n")
    result = gen(tmp_path / "rooms", "--spec", str(spec))
    assert result.exit_code == 2
    assert "rules[0].class" in result.output


def test_non_numeric_completeness_range_exits_with_usage_error(tmp_path: Path) -> None:
    result = gen(tmp_path / "rooms", "--completeness-range", "x:y")
    assert result.exit_code == 2
    assert "completeness_range" in result.output
    assert not (tmp_path / "rooms" / "manifest.json").exists()


def test_missing_knowledge_base(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    result = runner.invoke(
        app,
        ["train", "--data", str(tmp_path / "rooms"), "--out", str(tmp_path / "m.ckpt"), "--kb", str(tmp_path / "none.tsv"), *TINY_MODEL],
    )
    assert result.exit_code == 2


def test_dimension_mismatch(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    result = runner.invoke(
        app, ["train", "--data", str(tmp_path / "rooms"), "--out", str(tmp_path / "m.ckpt"), "--dim-3d", *TINY_MODEL]
    )
    assert result.exit_code == 2


def test_train_eval_predict(tmp_path: Path) -> None:
    data, model, summary = trained_model(tmp_path)
    assert summary["epochs"] == 2
    assert model.exists()
    assert (tmp_path / "models" / "best_log.csv").exists()

    report_dir = tmp_path / "report"
    result = runner.invoke(app, ["eval", "--model", str(model), "--data", str(data), "--out", str(report_dir), "--split", "train"])
    assert result.exit_code == 0, result.output
    evaluated = json.loads(result.stdout)
    assert set(evaluated["lsr"]) == {"0.5", "1.0", "2.0", "3.0"}
    report = json.loads((report_dir / "report.json").read_text())
    assert report["count"] == evaluated["scenes"]
    assert "centroid_baseline" in report["metadata"]
    assert (report_dir / "records.csv").exists() and (report_dir / "bins.csv").exists()

    again = runner.invoke(app, ["eval", "--model", str(model), "--data", str(data), "--out", str(report_dir), "--split", "train"])
    assert json.loads(again.stdout)["skipped"] is True

    scene = first_scene(data)
    result = runner.invoke(app, ["predict", "--model", str(model), "--scene", str(scene)])
    assert result.exit_code == 0, result.output
    predicted = json.loads(result.stdout)
    assert len(predicted["predicted_position"]) == 2
    assert predicted["error"] >= 0

    attention = tmp_path / "attention.json"
    result = runner.invoke(app, ["predict", "--model", str(model), "--scene", str(scene), "--attention", str(attention)])
    assert result.exit_code == 0, result.output
    trace = json.loads(attention.read_text())
    assert len(trace["layers"]) == 1
    assert len(trace["layers"][0]["heads"]) == 2

    focused = tmp_path / "focused.json"
    result = runner.invoke(
        app, ["inspect-attention", "--model", str(model), "--scene", str(scene), "--out", str(focused), "--raw", "--target-only"]
    )
    assert result.exit_code == 0, result.output
    payload = json.loads(focused.read_text())
    assert payload["normalised"] is False
    assert all(m["dst_label"] == payload["target"] for h in payload["layers"][0]["heads"] for m in h["messages"])


def test_eval_rejects_unknown_split(tmp_path: Path) -> None:
    result = runner.invoke(
        app, ["eval", "--model", str(tmp_path / "m.ckpt"), "--data", str(tmp_path), "--out", str(tmp_path / "r"), "--split", "holdout"]
    )
    assert result.exit_code == 2


def test_predict_missing_model(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    result = runner.invoke(app, ["predict", "--model", str(tmp_path / "absent.ckpt"), "--scene", str(first_scene(tmp_path / "rooms"))])
    assert result.exit_code == 2


def test_inspect_graph(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    scene = first_scene(tmp_path / "rooms")
    bare = json.loads(runner.invoke(app, ["inspect-graph", "--scene", str(scene), "--relations", ""]).stdout)
    rich = json.loads(runner.invoke(app, ["inspect-graph", "--scene", str(scene)]).stdout)
    assert all(node["kind"] != "Concept" for node in bare["nodes"])
    assert len(rich["nodes"]) >= len(bare["nodes"])
    out = tmp_path / "graph.json"
    result = runner.invoke(app, ["inspect-graph", "--scene", str(scene), "--out", str(out)])
    assert result.exit_code == 0
    assert json.loads(out.read_text()) == rich


def test_graph_stats(tmp_path: Path) -> None:
    assert gen(tmp_path / "rooms").exit_code == 0
    result = runner.invoke(app, ["graph-stats", "--data", str(tmp_path / "rooms"), "--relations", "atloc"])
    assert result.exit_code == 0, result.output
    stats = json.loads(result.stdout)
    assert stats["relations"] == ["AtLocation"]
    assert stats["usedfor_concepts"]["max"] == 0
    assert stats["graphs"] >= 1


@pytest.mark.parametrize("flag_epochs, expected", [(None, 7), (3, 3)])
def test_flags_override_yaml(tmp_path: Path, flag_epochs, expected) -> None:
    path = tmp_path / "train.yaml"
    path.write_text("epochs: 7\nlr: 0.01\nmodel:\n  layers: 2\n")
    cfg = resolve_train_config(
        config_path=path,
        overrides={"epochs": flag_epochs, "lr": None},
        model_overrides={"d_emb": 16, "layers": None, "relations": []},
    )
    assert cfg.epochs == expected
    assert cfg.lr == 0.01
    assert cfg.model.layers == 2
    assert cfg.model.d_emb == 16
    assert cfg.model.relations == ()
