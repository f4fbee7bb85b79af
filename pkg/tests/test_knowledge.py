from pathlib import Path

import numpy as np
import pytest

from dscg_localizer.errors import KnowledgeParseError
from dscg_localizer.knowledge import (
    Relation,
    embed,
    hashed_unit_vector,
    is_known_term,
    load_kb,
    query_concepts,
    write_embeddings,
    write_triples,
)

EMBEDDINGS = """DIM 3
chair 1.0 0.0 0.0
coffee 0.0 2.0 0.0
table 0.0 0.0 4.0
kitchen 0.5 0.5 0.5
"""


def write_kb(tmp_path: Path, rows: str, embeddings: str = EMBEDDINGS):
    triples = tmp_path / "kb.tsv"
    triples.write_text(rows, encoding="utf-8")
    vectors = tmp_path / "emb.txt"
    vectors.write_text(embeddings, encoding="utf-8")
    return load_kb(str(triples), str(vectors))


def test_load_three_rows(tmp_path: Path) -> None:
    kb = write_kb(
        tmp_path,
        "# subject\trelation\tobject\tweight\n"
        "chair\tAtLocation\tkitchen\t2.0\n"
        "chair\tAtLocation\toffice\t1.0\n"
        "chair\tUsedFor\tsitting\t3.5\n",
    )
    assert len(kb) == 3
    assert kb.d_emb == 3


def test_duplicate_triples_keep_max_weight(tmp_path: Path) -> None:
    kb = write_kb(tmp_path, "chair\tAtLocation\tkitchen\t1.5\nChair\tAtLocation\tKitchen\t2.0\n")
    assert len(kb) == 1
    assert query_concepts(kb, "chair", Relation.AT_LOCATION) == [("kitchen", 2.0)]


def test_unknown_relation_names_line(tmp_path: Path) -> None:
    with pytest.raises(KnowledgeParseError) as excinfo:
        write_kb(tmp_path, "chair\tAtLocation\tkitchen\t2.0\n\nchair\tPartOf\tdesk\t2.0\n")
    assert excinfo.value.line == 3


def test_malformed_rows_are_skipped(tmp_path: Path) -> None:
    kb = write_kb(tmp_path, "chair\tAtLocation\tkitchen\t2.0\nchair\tAtLocation\n")
    assert len(kb) == 1
    assert kb.skipped_lines == (2,)


def test_embedding_row_with_extra_components_is_skipped(tmp_path: Path) -> None:
    kb = write_kb(tmp_path, "chair\tAtLocation\tkitchen\t2.0\n", "DIM 3\nchair 0.1 1.0 0.0 0.0\nkitchen 0.5 0.5 0.5\n")
    assert set(kb.embeddings.vectors) == {"kitchen"}
    np.testing.assert_array_equal(embed(kb, "chair"), hashed_unit_vector("chair", 3))


def test_missing_file_raises(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_kb(str(tmp_path / "nope.tsv"), str(tmp_path / "nope.txt"))


def test_query_threshold_and_order(tmp_path: Path) -> None:
    kb = write_kb(
        tmp_path,
        "chair\tAtLocation\tkitchen\t2.0\n"
        "chair\tAtLocation\toffice\t1.0\n"
        "chair\tAtLocation\tdining room\t3.0\n",
    )
    assert query_concepts(kb, "chair", "AtLocation") == [("dining room", 3.0), ("kitchen", 2.0)]
    assert query_concepts(kb, "xyzzy", Relation.AT_LOCATION) == []


def test_bundled_kb_never_returns_weak_concepts(kb) -> None:
    for subject in kb.subjects():
        for relation in Relation:
            assert all(weight > 1 for _, weight in query_concepts(kb, subject, relation))


def test_embed_exact_mean_and_hashed(tmp_path: Path) -> None:
    kb = write_kb(tmp_path, "chair\tAtLocation\tkitchen\t2.0\n")
    np.testing.assert_array_equal(embed(kb, "Chair"), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(embed(kb, "coffee table"), [0.0, 1.0, 2.0])
    first, second = embed(kb, "xyzzy"), embed(kb, "xyzzy")
    np.testing.assert_array_equal(first, second)
    np.testing.assert_array_equal(first, hashed_unit_vector("xyzzy", 3))
    assert np.linalg.norm(first) == pytest.approx(1.0)
    assert is_known_term(kb, "coffee table")
    assert not is_known_term(kb, "xyzzy")


def test_reserialised_kb_answers_identically(kb, tmp_path: Path) -> None:
    write_triples(kb, str(tmp_path / "kb.tsv"))
    write_embeddings(kb.embeddings, str(tmp_path / "emb.txt"))
    reloaded = load_kb(str(tmp_path / "kb.tsv"), str(tmp_path / "emb.txt"))
    for subject in kb.subjects():
        for relation in Relation:
            assert query_concepts(reloaded, subject, relation) == query_concepts(kb, subject, relation)
        np.testing.assert_array_equal(embed(reloaded, subject), embed(kb, subject))
