"""Concept ontology: loading, normalization, child merging and exact synonym lookup."""

import json
import logging
import os
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from errors import OntologyError
from textprep import normalize
from utils.utils import read_jsonl, sha256_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Concept:
    id: str
    canonical: str
    synonyms: frozenset[str]
    parent: str | None = None

    def __post_init__(self):
        if self.canonical not in self.synonyms:
            raise OntologyError(f"concept '{self.id}': canonical name missing from synonyms")
        for synonym in self.synonyms:
            if not synonym or normalize(synonym) != synonym:
                raise OntologyError(
                    f"concept '{self.id}': synonym {synonym!r} is not normalized"
                )


class Ontology:
    """Immutable concept set with a synonym -> concept id index.

    Construction validates that no synonym belongs to two concepts, that every
    parent exists and that parent links form a forest.
    """

    def __init__(self, concepts: Iterable[Concept]):
        by_id: dict[str, Concept] = {}
        for concept in concepts:
            if concept.id in by_id:
                raise OntologyError(f"duplicate concept id '{concept.id}'")
            by_id[concept.id] = concept
        self._concepts = dict(sorted(by_id.items()))
        self._synonym_index = self._build_index(self._concepts)
        self._check_parents(self._concepts)
        self._fingerprint: str | None = None

    @staticmethod
    def _build_index(concepts: Mapping[str, Concept]) -> dict[str, str]:
        index: dict[str, str] = {}
        for concept in concepts.values():
            for synonym in sorted(concept.synonyms):
                owner = index.get(synonym)
                if owner is not None:
                    raise OntologyError(
                        f"synonym '{synonym}' is claimed by both '{owner}' and '{concept.id}'"
                    )
                index[synonym] = concept.id
        return index

    @staticmethod
    def _check_parents(concepts: Mapping[str, Concept]) -> None:
        for concept in concepts.values():
            if concept.parent is not None and concept.parent not in concepts:
                raise OntologyError(
                    f"concept '{concept.id}' has unknown parent '{concept.parent}'"
                )
        settled: set[str] = set()
        for start in concepts:
            path: list[str] = []
            on_path: set[str] = set()
            node = start
            while node is not None and node not in settled:
                if node in on_path:
                    cycle = path[path.index(node) :] + [node]
                    raise OntologyError("cycle in parent links: " + " -> ".join(cycle))
                path.append(node)
                on_path.add(node)
                node = concepts[node].parent
            settled.update(path)

    @property
    def concepts(self) -> Mapping[str, Concept]:
        return self._concepts

    @property
    def synonym_index(self) -> Mapping[str, str]:
        return self._synonym_index

    def __len__(self) -> int:
        return len(self._concepts)

    def __contains__(self, concept_id: str) -> bool:
        return concept_id in self._concepts

    def __getitem__(self, concept_id: str) -> Concept:
        return self._concepts[concept_id]

    def concept_ids(self) -> list[str]:
        return list(self._concepts)

    def synonym_pairs(self) -> list[tuple[str, str]]:
        """All (synonym, concept id) pairs, sorted by synonym."""
        return sorted(self._synonym_index.items())

    def fingerprint(self) -> str:
        if self._fingerprint is None:
            self._fingerprint = sha256_text("\n".join(self._concepts))
        return self._fingerprint

    def __repr__(self):
        return f"Ontology(concepts={len(self._concepts)}, synonyms={len(self._synonym_index)})"


def make_concept(
    concept_id: str, canonical: str, synonyms: Iterable[str] = (), parent: str | None = None
) -> Concept:
    canonical_norm = normalize(canonical)
    if not canonical_norm:
        raise OntologyError(f"concept '{concept_id}' has an empty canonical name")
    normalized = {normalize(s) for s in synonyms}
    normalized.discard("")
    normalized.add(canonical_norm)
    return Concept(concept_id, canonical_norm, frozenset(normalized), parent)


def load_ontology(path: str) -> Ontology:
    concepts: list[Concept] = []
    line_of: dict[str, int] = {}
    for line_no, obj in read_jsonl(path):
        try:
            concept_id = obj["id"]
            canonical = obj["canonical"]
            synonyms = obj.get("synonyms", [])
            parent = obj.get("parent")
        except KeyError as e:
            raise OntologyError(f"missing field {e}", path=path, line=line_no)
        if not isinstance(concept_id, str) or not concept_id:
            raise OntologyError("field 'id' must be a non-empty string", path=path, line=line_no)
        if not isinstance(canonical, str):
            raise OntologyError("field 'canonical' must be a string", path=path, line=line_no)
        if not isinstance(synonyms, list) or not all(isinstance(s, str) for s in synonyms):
            raise OntologyError("field 'synonyms' must be a list of strings", path=path, line=line_no)
        if parent is not None and not isinstance(parent, str):
            raise OntologyError("field 'parent' must be a string or null", path=path, line=line_no)
        if concept_id in line_of:
            raise OntologyError(
                f"duplicate concept id '{concept_id}' (first defined on line {line_of[concept_id]})",
                path=path,
                line=line_no,
            )
        line_of[concept_id] = line_no
        try:
            concepts.append(make_concept(concept_id, canonical, synonyms, parent))
        except OntologyError as e:
            raise OntologyError(e.detail, path=path, line=line_no)
    try:
        ontology = Ontology(concepts)
    except OntologyError as e:
        raise OntologyError(e.detail, path=path)
    logger.info(
        "Loaded ontology %s: %d concepts, %d synonyms",
        path,
        len(ontology),
        len(ontology.synonym_index),
    )
    return ontology


def save_ontology(ont: Ontology, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for concept in ont.concepts.values():
            row = {
                "id": concept.id,
                "canonical": concept.canonical,
                "synonyms": sorted(concept.synonyms),
                "parent": concept.parent,
            }
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_merge_spec(path: str) -> set[str]:
    if not os.path.exists(path):
        raise OntologyError("merge spec does not exist", path=path)
    with open(path, "r", encoding="utf-8") as handle:
        return {line.strip() for line in handle if line.strip() and not line.startswith("#")}


def save_merge_spec(path: str, merge_ids: Iterable[str]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("# concept ids to fold into their parents\n")
        for concept_id in sorted(merge_ids):
            handle.write(f"{concept_id}\n")


def merge_children(ont: Ontology, merge_ids: Iterable[str]) -> Ontology:
    """Fold each listed child into its nearest surviving ancestor.

    Synonyms move up; grandchildren are re-parented to the same ancestor.
    """
    merge_set = set(merge_ids)
    if not merge_set:
        return ont
    for concept_id in sorted(merge_set):
        if concept_id not in ont:
            raise OntologyError(f"cannot merge unknown concept '{concept_id}'")
        if ont[concept_id].parent is None:
            raise OntologyError(f"cannot merge root concept '{concept_id}' (it has no parent)")

    def surviving_ancestor(concept_id: str) -> str | None:
        parent = ont[concept_id].parent
        while parent is not None and parent in merge_set:
            parent = ont[parent].parent
        return parent

    absorbed: dict[str, set[str]] = {}
    for concept_id in merge_set:
        target = surviving_ancestor(concept_id)
        absorbed.setdefault(target, set()).update(ont[concept_id].synonyms)

    merged = []
    for concept in ont.concepts.values():
        if concept.id in merge_set:
            continue
        parent = concept.parent
        if parent is not None and parent in merge_set:
            parent = surviving_ancestor(parent)
        synonyms = concept.synonyms | absorbed.get(concept.id, set())
        merged.append(Concept(concept.id, concept.canonical, frozenset(synonyms), parent))
    result = Ontology(merged)
    logger.info("Merged %d child concepts: %d -> %d concepts", len(merge_set), len(ont), len(result))
    return result


def lookup_exact(ont: Ontology, s: str) -> str | None:
    return ont.synonym_index.get(s)
