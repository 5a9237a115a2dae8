import logging
import threading
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass
from weakref import WeakKeyDictionary

import numpy as np

from annotations import MatchStage, WeakAnnotation
from embedding import EmbeddingTable, embed_phrase
from errors import ConfigError
from ontology import Ontology, lookup_exact
from textprep import Chunk, SeparatorConfig, tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchConfig:
    tau_approx: float = 0.7
    tau_emb: float = 0.85
    ngram_size: int = 3

    def __post_init__(self):
        if not 0.0 < self.tau_approx <= 1.0:
            raise ConfigError(f"tau_approx must be in (0, 1], got {self.tau_approx}")
        if not 0.0 < self.tau_emb <= 1.0:
            raise ConfigError(f"tau_emb must be in (0, 1], got {self.tau_emb}")
        if self.ngram_size < 2:
            raise ConfigError(f"ngram_size must be >= 2, got {self.ngram_size}")


def char_ngram_set(s: str, n: int) -> frozenset[str]:
    return frozenset(s[i : i + n] for i in range(len(s) - n + 1))


def ngram_jaccard(a: str, b: str, n: int) -> float:
    if len(a) < n or len(b) < n:
        return 1.0 if a == b else 0.0
    ga, gb = char_ngram_set(a, n), char_ngram_set(b, n)
    inter = len(ga & gb)
    return inter / (len(ga) + len(gb) - inter)


def _better(candidate: tuple[float, str, str], best: tuple[float, str, str] | None) -> bool:
    """Order (score, synonym, concept id): higher score, longer synonym, smaller id."""
    if best is None:
        return True
    score, synonym, concept_id = candidate
    best_score, best_synonym, best_id = best
    if score != best_score:
        return score > best_score
    if len(synonym) != len(best_synonym):
        return len(synonym) > len(best_synonym)
    return concept_id < best_id


class NgramIndex:
    """Inverted index from character n-grams to ontology synonyms."""

    def __init__(self, ontology: Ontology, n: int):
        self.n = n
        self.entries: list[tuple[str, str]] = ontology.synonym_pairs()
        self.gram_sizes: list[int] = []
        self.postings: dict[str, list[int]] = defaultdict(list)
        self.exact_entries: dict[str, int] = {}
        for entry_id, (synonym, _) in enumerate(self.entries):
            grams = char_ngram_set(synonym, n)
            self.gram_sizes.append(len(grams))
            self.exact_entries[synonym] = entry_id
            for gram in grams:
                self.postings[gram].append(entry_id)

    def best_match(self, s: str, threshold: float) -> tuple[float, str, str] | None:
        """Best synonym at Jaccard >= threshold; an identical synonym always wins a 1.0 tie."""
        entry_id = self.exact_entries.get(s)
        if entry_id is not None:
            synonym, concept_id = self.entries[entry_id]
            return (1.0, synonym, concept_id)
        if len(s) < self.n:
            return None
        grams = char_ngram_set(s, self.n)
        overlap: dict[int, int] = defaultdict(int)
        for gram in grams:
            for entry_id in self.postings.get(gram, ()):
                overlap[entry_id] += 1
        best = None
        for entry_id, inter in overlap.items():
            score = inter / (len(grams) + self.gram_sizes[entry_id] - inter)
            if score < threshold:
                continue
            synonym, concept_id = self.entries[entry_id]
            candidate = (score, synonym, concept_id)
            if _better(candidate, best):
                best = candidate
        return best


_INDEX_CACHE: "WeakKeyDictionary[Ontology, dict[int, NgramIndex]]" = WeakKeyDictionary()
_INDEX_CACHE_LOCK = threading.Lock()


def shared_ngram_index(ontology: Ontology, n: int) -> NgramIndex:
    """The n-gram index of an ontology, built once and reused."""
    with _INDEX_CACHE_LOCK:
        per_size = _INDEX_CACHE.setdefault(ontology, {})
        if n not in per_size:
            per_size[n] = NgramIndex(ontology, n)
        return per_size[n]


class MatchProvider(ABC):
    stage: MatchStage

    def __init__(self, ontology: Ontology, match_config: MatchConfig):
        self.ontology = ontology
        self.match_config = match_config
        self.last_error = None
        self.diagnostics: dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()

    @abstractmethod
    def match(self, chunk: Chunk, record_id: str = "") -> WeakAnnotation | None:
        pass

    def get_last_error(self) -> str | None:
        return self.last_error


class ExactMatchProvider(MatchProvider):
    stage = MatchStage.S1

    def match(self, chunk: Chunk, record_id: str = "") -> WeakAnnotation | None:
        concept_id = lookup_exact(self.ontology, chunk.text)
        if concept_id is None:
            return None
        return WeakAnnotation(record_id, chunk.span, concept_id, 1.0, self.stage)


class ApproxMatchProvider(MatchProvider):
    stage = MatchStage.S2

    def __init__(self, ontology: Ontology, match_config: MatchConfig):
        super().__init__(ontology, match_config)
        self.index = shared_ngram_index(ontology, match_config.ngram_size)

    def best(self, text: str) -> tuple[float, str, str] | None:
        return self.index.best_match(text, self.match_config.tau_approx)

    def match(self, chunk: Chunk, record_id: str = "") -> WeakAnnotation | None:
        best = self.best(chunk.text)
        if best is None:
            return None
        score, _, concept_id = best
        return WeakAnnotation(record_id, chunk.span, concept_id, score, self.stage)


class EmbeddingMatchProvider(MatchProvider):
    stage = MatchStage.S3

    def __init__(
        self,
        ontology: Ontology,
        match_config: MatchConfig,
        embeddings: EmbeddingTable,
        separator_config: SeparatorConfig | None = None,
    ):
        super().__init__(ontology, match_config)
        self.embeddings = embeddings
        self.entries = ontology.synonym_pairs()
        vectors = []
        for synonym, _ in self.entries:
            words = [t.text for t in tokenize(synonym, separator_config) if t.is_word]
            vectors.append(embed_phrase(embeddings, words or [synonym]))
        matrix = np.stack(vectors) if vectors else np.zeros((0, embeddings.dim))
        norms = np.linalg.norm(matrix, axis=1) if len(matrix) else np.zeros(0)
        self.unit_vectors = np.divide(
            matrix, norms[:, None], out=np.zeros_like(matrix), where=norms[:, None] > 0
        )

    def similarities(self, tokens: list[str]) -> np.ndarray | None:
        vector = embed_phrase(self.embeddings, tokens)
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            return None
        return np.clip(self.unit_vectors @ (vector / norm), -1.0, 1.0)

    def match(self, chunk: Chunk, record_id: str = "") -> WeakAnnotation | None:
        sims = self.similarities(chunk.word_tokens)
        if sims is None:
            with self._lock:
                self.diagnostics["zero_vector_chunks"] += 1
                self.last_error = f"no embedding coverage for chunk '{chunk.text}'"
            return None
        best = None
        for entry_id in np.flatnonzero(sims >= self.match_config.tau_emb):
            synonym, concept_id = self.entries[entry_id]
            candidate = (float(sims[entry_id]), synonym, concept_id)
            if _better(candidate, best):
                best = candidate
        if best is None:
            return None
        confidence = min(1.0, max(best[0], 0.0))
        return WeakAnnotation(record_id, chunk.span, best[2], confidence, self.stage)


def get_match_provider(
    stage: MatchStage,
    ontology: Ontology,
    match_config: MatchConfig,
    embeddings: EmbeddingTable | None = None,
    separator_config: SeparatorConfig | None = None,
) -> MatchProvider:
    if stage is MatchStage.S1:
        return ExactMatchProvider(ontology, match_config)
    if stage is MatchStage.S2:
        return ApproxMatchProvider(ontology, match_config)
    if stage is MatchStage.S3:
        if embeddings is None:
            raise ConfigError("stage S3 needs an embedding table (--embeddings)")
        return EmbeddingMatchProvider(ontology, match_config, embeddings, separator_config)
    raise ConfigError(f"unsupported matching stage: {stage}")
