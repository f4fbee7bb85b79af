"""Offline commonsense knowledge: weighted triples plus a term embedding table."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import KnowledgeParseError
from .io import Filesystem
from .logger import get_logger

MIN_CONCEPT_WEIGHT = 1.0

_WHITESPACE = re.compile(r"\s+")


class Relation(str, Enum):
    AT_LOCATION = "AtLocation"
    USED_FOR = "UsedFor"

    @classmethod
    def parse(cls, token: str) -> "Relation":
        for member in cls:
            if member.value.lower() == token.strip().lower():
                return member
        raise ValueError(f"unknown relation '{token}'")


def normalise_term(term: str) -> str:
    """Lowercase, underscores to spaces, single spaces."""
    return _WHITESPACE.sub(" ", term.replace("_", " ")).strip().lower()


@dataclass(frozen=True, slots=True)
class KnowledgeTriple:
    subject: str
    relation: Relation
    object: str
    weight: float

    def __post_init__(self) -> None:
        if not self.weight >= 0 or math.isinf(self.weight):
            raise ValueError(f"triple weight must be a finite non-negative number, got {self.weight}")


@dataclass(slots=True)
class EmbeddingTable:
    dim: int
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("embedding dimension must be positive")
        for term, vector in list(self.vectors.items()):
            array = np.asarray(vector, dtype=np.float64)
            if array.shape != (self.dim,) or not np.isfinite(array).all():
                raise ValueError(f"embedding for '{term}' must be {self.dim} finite floats")
            array.flags.writeable = False
            self.vectors[term] = array

    def __contains__(self, term: str) -> bool:
        return normalise_term(term) in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)


class KnowledgeBase:
    """Immutable after construction; lookups are case/whitespace normalised."""

    def __init__(
        self,
        triples: Sequence[KnowledgeTriple],
        embeddings: EmbeddingTable,
        *,
        skipped_lines: Sequence[int] = (),
    ) -> None:
        best: Dict[Tuple[str, Relation, str], float] = {}
        for triple in triples:
            key = (normalise_term(triple.subject), triple.relation, normalise_term(triple.object))
            if key not in best or triple.weight > best[key]:
                best[key] = triple.weight
        self.triples: Tuple[KnowledgeTriple, ...] = tuple(
            KnowledgeTriple(subject=s, relation=r, object=o, weight=w) for (s, r, o), w in best.items()
        )
        self.embeddings = embeddings
        self.skipped_lines: Tuple[int, ...] = tuple(skipped_lines)
        index: Dict[Tuple[str, Relation], List[Tuple[str, float]]] = {}
        for triple in self.triples:
            index.setdefault((triple.subject, triple.relation), []).append((triple.object, triple.weight))
        self._index = index

    @property
    def d_emb(self) -> int:
        return self.embeddings.dim

    def subjects(self) -> List[str]:
        return sorted({triple.subject for triple in self.triples})

    def __len__(self) -> int:
        return len(self.triples)


def _parse_triples(text: str, path: str, logger: logging.Logger) -> Tuple[List[KnowledgeTriple], List[int]]:
    triples: List[KnowledgeTriple] = []
    skipped: List[int] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        columns = raw.rstrip("\r\n").split("\t")
        if len(columns) != 4:
            skipped.append(number)
            logger.warning(
                "Malformed knowledge row skipped",
                extra={"extra_fields": {"path": path, "line": number, "reason": "expected 4 tab separated columns"}},
            )
            continue
        subject, relation_token, obj, weight_token = (column.strip() for column in columns)
        try:
            relation = Relation.parse(relation_token)
        except ValueError as exc:
            raise KnowledgeParseError(str(exc), line=number, path=path) from exc
        try:
            triple = KnowledgeTriple(subject, relation, obj, float(weight_token))
            if not subject or not obj:
                raise ValueError("empty concept term")
        except ValueError as exc:
            skipped.append(number)
            logger.warning(
                "Malformed knowledge row skipped",
                extra={"extra_fields": {"path": path, "line": number, "reason": str(exc)}},
            )
            continue
        triples.append(triple)
    return triples, skipped


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def _parse_embeddings(text: str, path: str, logger: logging.Logger) -> Tuple[EmbeddingTable, List[int]]:
    lines = text.splitlines()
    header = lines[0].split() if lines else []
    if len(header) != 2 or header[0] != "DIM":
        raise KnowledgeParseError("embeddings file must start with 'DIM <d_emb>'", line=1, path=path)
    try:
        dim = int(header[1])
    except ValueError as exc:
        raise KnowledgeParseError("embedding dimension is not an integer", line=1, path=path) from exc
    if dim < 1:
        raise KnowledgeParseError("embedding dimension must be positive", line=1, path=path)
    vectors: Dict[str, np.ndarray] = {}
    skipped: List[int] = []
    for number, raw in enumerate(lines[1:], start=2):
        tokens = raw.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        term = normalise_term(" ".join(tokens[:-dim]))
        try:
            if not term:
                raise ValueError("missing term")
            if any(_is_number(token) for token in tokens[:-dim]):
                raise ValueError(f"more than {dim} components")
            vector = np.array([float(value) for value in tokens[-dim:]], dtype=np.float64)
            if not np.isfinite(vector).all():
                raise ValueError("non-finite component")
        except ValueError as exc:
            skipped.append(number)
            logger.warning(
                "Malformed embedding row skipped",
                extra={"extra_fields": {"path": path, "line": number, "reason": str(exc)}},
            )
            continue
        vectors[term] = vector
    return EmbeddingTable(dim=dim, vectors=vectors), skipped


def load_kb(
    triples_path: str,
    embeddings_path: str,
    *,
    fs: Optional[Filesystem] = None,
    logger: Optional[logging.Logger] = None,
) -> KnowledgeBase:
    """Load the TSV triples file and the ``DIM``-headed embeddings file."""
    fs = fs or Filesystem()
    logger = logger or get_logger()
    for path in (triples_path, embeddings_path):
        if not fs.exists(path):
            raise FileNotFoundError(f"knowledge file not found: {path}")
    triples, skipped_triples = _parse_triples(fs.read_text(triples_path), str(triples_path), logger)
    table, skipped_embeddings = _parse_embeddings(fs.read_text(embeddings_path), str(embeddings_path), logger)
    kb = KnowledgeBase(triples, table, skipped_lines=skipped_triples)
    logger.info(
        "Knowledge base loaded",
        extra={
            "step": "load_kb",
            "counts": {
                "triples": len(kb),
                "terms": len(table),
                "skipped_triples": len(skipped_triples),
                "skipped_embeddings": len(skipped_embeddings),
            },
        },
    )
    return kb


def query_concepts(kb: KnowledgeBase, object_class: str, relation: Relation | str) -> List[Tuple[str, float]]:
    """Concepts linked to ``object_class`` with weight strictly above 1.

    Sorted by descending weight, then term.
    """
    relation = relation if isinstance(relation, Relation) else Relation.parse(relation)
    hits = [
        (concept, weight)
        for concept, weight in kb._index.get((normalise_term(object_class), relation), [])
        if weight > MIN_CONCEPT_WEIGHT
    ]
    return sorted(hits, key=lambda item: (-item[1], item[0]))


def hashed_unit_vector(term: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(normalise_term(term).encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    vector = rng.standard_normal(dim)
    return vector / np.linalg.norm(vector)


def embed(kb: KnowledgeBase, term: str) -> np.ndarray:
    """Stored vector, else the mean of known token vectors, else a hashed unit vector."""
    key = normalise_term(term)
    vectors = kb.embeddings.vectors
    if key in vectors:
        return vectors[key]
    tokens = [vectors[token] for token in key.split(" ") if token in vectors]
    if tokens:
        return np.mean(np.stack(tokens), axis=0)
    return hashed_unit_vector(key, kb.d_emb)


def is_known_term(kb: KnowledgeBase, term: str) -> bool:
    key = normalise_term(term)
    return key in kb.embeddings.vectors or any(token in kb.embeddings.vectors for token in key.split(" "))


def write_triples(kb: KnowledgeBase, path: str, *, fs: Optional[Filesystem] = None) -> None:
    fs = fs or Filesystem()
    rows = ["# subject\trelation\tobject\tweight"]
    for triple in sorted(kb.triples, key=lambda t: (t.subject, t.relation.value, t.object)):
        rows.append(f"{triple.subject}\t{triple.relation.value}\t{triple.object}\t{triple.weight!r}")
    fs.write_text(path, "\n".join(rows) + "\n")


def write_embeddings(table: EmbeddingTable, path: str, *, fs: Optional[Filesystem] = None) -> None:
    fs = fs or Filesystem()
    rows = [f"DIM {table.dim}"]
    for term in sorted(table.vectors):
        rows.append(" ".join([term, *(repr(float(value)) for value in table.vectors[term])]))
    fs.write_text(path, "\n".join(rows) + "\n")


__all__ = [
    "Relation",
    "KnowledgeTriple",
    "EmbeddingTable",
    "KnowledgeBase",
    "MIN_CONCEPT_WEIGHT",
    "normalise_term",
    "load_kb",
    "query_concepts",
    "embed",
    "is_known_term",
    "hashed_unit_vector",
    "write_triples",
    "write_embeddings",
]
