import logging
import os
import threading
import time
from collections.abc import Callable, Sequence

from annotations import AnnotatedRecord, MatchStage, write_annotation_file
from config_manager import ConfigManager
from embedding import EmbeddingTable, save_embeddings, train_embeddings
from errors import CancelledError, DataError
from evaluation import EvalReport, Subset, evaluate_records
from linker import (
    LinkedEntity,
    LinkerModel,
    LinkMode,
    linked_to_annotated,
    link_mentions,
    save_linker,
    train_linker,
    write_linked,
)
from matcher import WeakDataset, generate_weak_labels
from ontology import Ontology
from tagger import (
    Mention,
    RefineMode,
    TaggedSequence,
    TaggerModel,
    TrainingStrategy,
    decode,
    encode_bio,
    refine_with_matcher,
    save_tagger,
    tighten_weak_labels,
    train_tagger,
)
from textprep import Record
from utils.utils import derive_seed

logger = logging.getLogger(__name__)


class WeakSupervisionPipeline:
    """Runs weak labeling, model training, extraction and linking with one config."""

    def __init__(self, config_manager: ConfigManager):
        self.config_manager = config_manager
        self.last_error = None
        self.seed = config_manager.seed
        self.workers = config_manager.workers
        self.separator_config = config_manager.separator_config()
        self.match_config = config_manager.match_config()
        self.tagger_config = config_manager.tagger_config()
        self.linker_config = config_manager.linker_config()
        self.timings: dict[str, float] = {}

    def get_last_error(self) -> str | None:
        return self.last_error

    def needs_embeddings(self, stages: Sequence[MatchStage]) -> bool:
        return (
            MatchStage.S3 in stages
            or self.tagger_config.use_embeddings
            or self.linker_config.use_embeddings
        )

    def train_embeddings(self, corpus: Sequence[Record], progress_callback=None) -> EmbeddingTable:
        params = self.config_manager.embedding_params()
        params["seed"] = derive_seed(self.seed, "embedding") % (1 << 32)
        return train_embeddings(
            corpus, sep_cfg=self.separator_config, progress_callback=progress_callback, **params
        )

    def weak_label(
        self,
        corpus: Sequence[Record],
        ont: Ontology,
        embeddings: EmbeddingTable | None,
        stages: Sequence[MatchStage],
        progress_callback=None,
    ) -> WeakDataset:
        return generate_weak_labels(
            corpus,
            ont,
            embeddings,
            self.match_config,
            stages,
            self.separator_config,
            self.workers,
            progress_callback,
        )

    def encode(
        self, records: Sequence[AnnotatedRecord], weak: bool, ont: Ontology | None = None
    ) -> list[TaggedSequence]:
        """BIO sequences for tagger training; weak records are tightened when ``ont`` is given."""
        if weak and ont is not None and self.tagger_config.tighten_spans:
            records = tighten_weak_labels(
                records, ont, self.tagger_config.tighten_min_df, self.separator_config
            )
        return [
            encode_bio(
                r.record,
                r.annotations,
                self.separator_config,
                unmatched_spans=r.unmatched_spans if weak else None,
                w_unmatched=self.tagger_config.w_unmatched,
            )
            for r in records
        ]

    def train_tagger(
        self,
        strategy: TrainingStrategy,
        weak: Sequence[AnnotatedRecord] | None,
        gold: Sequence[AnnotatedRecord] | None,
        embeddings: EmbeddingTable | None,
        augment_drop_p: float | None = None,
        progress_callback=None,
        ont: Ontology | None = None,
    ) -> TaggerModel:
        if strategy is TrainingStrategy.SUPERVISED:
            if not gold:
                raise DataError("supervised tagger training needs gold annotations")
            data, gold_data = self.encode(gold, weak=False), None
        else:
            if not weak:
                raise DataError(f"'{strategy.value}' tagger training needs weak annotations")
            if ont is None and self.tagger_config.tighten_spans:
                logger.warning("No ontology given; weak spans are used without tightening")
            data = self.encode(weak, weak=True, ont=ont)
            gold_data = self.encode(gold, weak=False) if gold else None
        return train_tagger(
            data,
            self.tagger_config,
            strategy,
            self.config_manager.augment_drop_p if augment_drop_p is None else augment_drop_p,
            derive_seed(self.seed, "tagger") % (1 << 32),
            gold=gold_data,
            embeddings=embeddings,
            sep_cfg=self.separator_config,
            progress_callback=progress_callback,
        )

    def train_linker(
        self,
        records: Sequence[AnnotatedRecord],
        ont: Ontology,
        embeddings: EmbeddingTable | None,
        progress_callback=None,
    ) -> LinkerModel:
        data = [
            (r.record, ann)
            for r in records
            for ann in r.annotations
            if ann.concept_id is not None
        ]
        return train_linker(
            data,
            ont,
            self.linker_config,
            derive_seed(self.seed, "linker") % (1 << 32),
            embeddings=embeddings,
            sep_cfg=self.separator_config,
            progress_callback=progress_callback,
        )

    def extract(
        self,
        model: TaggerModel,
        corpus: Sequence[Record],
        ont: Ontology,
        embeddings: EmbeddingTable | None,
        refine: RefineMode | None = None,
    ) -> dict[str, list[Mention]]:
        mentions = {}
        for rec in corpus:
            found = decode(model, rec, embeddings)
            if refine is not None:
                found = refine_with_matcher(found, rec, ont, self.match_config, refine)
            mentions[rec.id] = found
        logger.info(
            "Extracted %d mentions from %d records",
            sum(len(m) for m in mentions.values()),
            len(corpus),
        )
        return mentions

    def link(
        self,
        corpus: Sequence[Record],
        mentions: dict[str, list[Mention]],
        ont: Ontology,
        mode: LinkMode,
        model: LinkerModel | None,
        embeddings: EmbeddingTable | None,
    ) -> list[LinkedEntity]:
        entities = []
        for rec in corpus:
            entities.extend(
                link_mentions(mentions.get(rec.id, []), rec, mode, ont, model, embeddings)
            )
        return entities

    def run(
        self,
        corpus: Sequence[Record],
        ont: Ontology,
        out_dir: str,
        stages: Sequence[MatchStage],
        strategy: TrainingStrategy = TrainingStrategy.WEAK_ONLY,
        refine: RefineMode | None = None,
        link_mode: LinkMode = LinkMode.ENSEMBLE,
        gold: Sequence[AnnotatedRecord] | None = None,
        train_gold: Sequence[AnnotatedRecord] | None = None,
        progress_callback: Callable[[int, str], None] | None = None,
        cancellation_event: threading.Event | None = None,
    ) -> dict:
        """Embeddings, weak labels, tagger, linker, extraction and linking; writes every artifact.

        ``gold`` is scored against the linked output; ``train_gold`` feeds the
        supervised and fine-tune strategies.
        """
        self.last_error = None
        self.timings = {}
        paths = {}

        def _report_progress(percentage, message):
            logger.info(message)
            if progress_callback:
                progress_callback(percentage, message)

        def _check_cancelled():
            if cancellation_event and cancellation_event.is_set():
                self.last_error = "pipeline cancelled"
                raise CancelledError(self.last_error)

        def _timed(name, func, *args, **kwargs):
            started = time.perf_counter()
            result = func(*args, **kwargs)
            self.timings[name] = round(time.perf_counter() - started, 3)
            return result

        os.makedirs(out_dir, exist_ok=True)
        paths["config"] = self.config_manager.save(os.path.join(out_dir, "effective.ini"))
        _report_progress(0, f"pipeline: {len(corpus)} records, {len(ont)} concepts")

        embeddings = None
        if self.needs_embeddings(stages):
            _check_cancelled()
            _report_progress(5, "training embeddings")
            embeddings = _timed("embeddings", self.train_embeddings, corpus)
            paths["embeddings"] = os.path.join(out_dir, "embeddings.bin")
            save_embeddings(embeddings, paths["embeddings"])

        _check_cancelled()
        _report_progress(25, "weak labeling")
        weak = _timed("weaklabel", self.weak_label, corpus, ont, embeddings, stages)
        paths["weak"] = os.path.join(out_dir, "weak.jsonl")
        weak.save(paths["weak"])

        _check_cancelled()
        _report_progress(40, f"training tagger ({strategy.value})")
        tagger = _timed(
            "tagger", self.train_tagger, strategy, weak.records, train_gold, embeddings, ont=ont
        )
        paths["tagger"] = os.path.join(out_dir, "tagger.bin")
        save_tagger(tagger, paths["tagger"])

        linker = None
        if link_mode is not LinkMode.EXACT:
            _check_cancelled()
            _report_progress(60, "training linker")
            linker = _timed("linker", self.train_linker, weak.records, ont, embeddings)
            paths["linker"] = os.path.join(out_dir, "linker.bin")
            save_linker(linker, paths["linker"])

        _check_cancelled()
        _report_progress(80, "extracting and linking")
        mentions = _timed("extract", self.extract, tagger, corpus, ont, embeddings, refine)
        entities = _timed("link", self.link, corpus, mentions, ont, link_mode, linker, embeddings)
        paths["linked"] = os.path.join(out_dir, "linked.jsonl")
        write_linked(paths["linked"], entities)
        predictions = linked_to_annotated(corpus, entities)
        paths["predictions"] = os.path.join(out_dir, "predictions.jsonl")
        write_annotation_file(paths["predictions"], predictions)

        summary = {
            "records": len(corpus),
            "concepts": len(ont),
            "stages": [s.value for s in weak.stages],
            "weak_annotations": weak.annotation_count(),
            "weak_stats": weak.stats,
            "strategy": strategy.value,
            "refine": refine.value if refine else "none",
            "link_mode": link_mode.value,
            "mentions": sum(len(m) for m in mentions.values()),
            "linked": len(entities),
        }
        if gold is not None:
            _check_cancelled()
            report: EvalReport = evaluate_records(
                gold, predictions, subset=Subset.ALL, sep_cfg=self.separator_config
            )
            paths["report"] = os.path.join(out_dir, "report.json")
            report.save(paths["report"])
            summary["report"] = report.to_json()
        summary["paths"] = paths
        summary["timings"] = dict(self.timings)
        _report_progress(100, "pipeline finished")
        return summary
