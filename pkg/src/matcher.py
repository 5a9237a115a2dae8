"""Split-and-match weak labeler.

Each record is split into chunks; every chunk goes through the enabled stages
in fixed order (S1 exact, S2 approximate, S3 embedding) and the first stage
that matches labels the chunk. Chunks no stage matches are kept as
``unmatched_spans`` for the tagger's weighting.
"""

import logging
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from annotations import AnnotatedRecord, MatchStage, WeakAnnotation, write_annotation_file
from embedding import EmbeddingTable
from errors import ConfigError
from ontology import Ontology
from services.match_providers import (
    ApproxMatchProvider,
    EmbeddingMatchProvider,
    ExactMatchProvider,
    MatchConfig,
    MatchProvider,
    get_match_provider,
    ngram_jaccard,
)
from textprep import Chunk, Record, SeparatorConfig, split_chunks

logger = logging.getLogger(__name__)

STAGE_ORDER = (MatchStage.S1, MatchStage.S2, MatchStage.S3)

__all__ = [
    "MatchConfig",
    "WeakDataset",
    "generate_weak_labels",
    "match_approx",
    "match_embedding",
    "match_exact",
    "ngram_jaccard",
]


def match_exact(chunk: Chunk, ont: Ontology, record_id: str = "") -> WeakAnnotation | None:
    return ExactMatchProvider(ont, MatchConfig()).match(chunk, record_id)


def match_approx(
    chunk: Chunk, ont: Ontology, cfg: MatchConfig, record_id: str = ""
) -> WeakAnnotation | None:
    """One-off S2 match. Builds the n-gram index; reuse a provider for corpora."""
    return ApproxMatchProvider(ont, cfg).match(chunk, record_id)


def match_embedding(
    chunk: Chunk,
    ont: Ontology,
    emb: EmbeddingTable,
    cfg: MatchConfig,
    record_id: str = "",
) -> WeakAnnotation | None:
    return EmbeddingMatchProvider(ont, cfg, emb).match(chunk, record_id)


@dataclass
class WeakDataset:
    records: list[AnnotatedRecord]
    stages: list[MatchStage]
    stats: dict[str, int] = field(default_factory=dict)

    def annotation_count(self) -> int:
        return sum(len(r.annotations) for r in self.records)

    def save(self, path: str) -> int:
        return write_annotation_file(path, self.records)


def _label_record(
    rec: Record, providers: Sequence[MatchProvider], sep_cfg: SeparatorConfig | None
) -> tuple[AnnotatedRecord, Counter]:
    annotations, unmatched = [], []
    tally: Counter = Counter()
    for chunk in split_chunks(rec, sep_cfg):
        tally["chunks"] += 1
        for provider in providers:
            annotation = provider.match(chunk, rec.id)
            if annotation is not None:
                annotations.append(annotation)
                tally[f"matched_{provider.stage.value}"] += 1
                break
        else:
            unmatched.append(chunk.span)
            tally["unmatched_chunks"] += 1
    return AnnotatedRecord(rec.id, rec.text, annotations, unmatched), tally


def generate_weak_labels(
    corpus: Iterable[Record],
    ont: Ontology,
    emb: EmbeddingTable | None,
    cfg: MatchConfig,
    stages: Iterable[MatchStage],
    sep_cfg: SeparatorConfig | None = None,
    workers: int = 1,
    progress_callback: Callable[[int, str], None] | None = None,
) -> WeakDataset:
    enabled = [s for s in STAGE_ORDER if s in set(stages)]
    if not enabled:
        raise ConfigError("at least one matching stage must be enabled")
    providers = [get_match_provider(s, ont, cfg, emb, sep_cfg) for s in enabled]
    corpus = list(corpus)

    def label(rec: Record):
        return _label_record(rec, providers, sep_cfg)

    if workers > 1:
        # map() yields in submission order, so output order is the corpus order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(label, corpus))
    else:
        results = []
        step = max(1, len(corpus) // 10)
        for i, rec in enumerate(corpus):
            results.append(label(rec))
            if progress_callback and (i + 1) % step == 0:
                progress_callback(int(100 * (i + 1) / len(corpus)), f"weak labels {i + 1}/{len(corpus)}")

    stats: Counter = Counter()
    for _, tally in results:
        stats.update(tally)
    for provider in providers:
        stats.update(provider.diagnostics)
    dataset = WeakDataset([r for r, _ in results], enabled, dict(sorted(stats.items())))
    logger.info(
        "Weak labeling with stages %s: %d records, %d annotations, %d unmatched chunks",
        ",".join(s.value for s in enabled),
        len(dataset.records),
        dataset.annotation_count(),
        stats.get("unmatched_chunks", 0),
    )
    return dataset
