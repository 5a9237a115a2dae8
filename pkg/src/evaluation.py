"""Span-level scoring in three modes: partial boundary, exact boundary, and entity type.

Gold and predicted spans are aligned greedily by character overlap; counts are
summed over the corpus before precision, recall and F1 are computed.
"""

import json
import logging
import os
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from enum import Enum

from annotations import AnnotatedRecord, read_annotation_file
from errors import EvaluationError
from textprep import SeparatorConfig, has_active_separator

logger = logging.getLogger(__name__)


class EvalMode(str, Enum):
    PARTIAL = "partial"
    EXACT = "exact"
    TYPE = "type"


class Subset(str, Enum):
    ALL = "all"
    WITH_PUNCT = "with-punct"
    NO_PUNCT = "no-punct"


@dataclass(frozen=True)
class TypedSpan:
    start: int
    end: int
    concept_id: str | None = None

    def overlap(self, other: "TypedSpan") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))


@dataclass
class EvalCounts:
    COR: int = 0
    INC: int = 0
    PAR: int = 0
    MIS: int = 0
    SPU: int = 0

    @property
    def possible(self) -> int:
        return self.COR + self.INC + self.PAR + self.MIS

    @property
    def actual(self) -> int:
        return self.COR + self.INC + self.PAR + self.SPU

    def __add__(self, other: "EvalCounts") -> "EvalCounts":
        return EvalCounts(
            self.COR + other.COR,
            self.INC + other.INC,
            self.PAR + other.PAR,
            self.MIS + other.MIS,
            self.SPU + other.SPU,
        )


def _check_disjoint(spans: Sequence[TypedSpan], side: str) -> None:
    ordered = sorted(spans, key=lambda s: (s.start, s.end))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start < prev.end:
            raise EvaluationError(
                f"overlapping {side} spans ({prev.start}, {prev.end}) and ({cur.start}, {cur.end})"
            )


def align(gold: Sequence[TypedSpan], pred: Sequence[TypedSpan], mode: EvalMode) -> EvalCounts:
    _check_disjoint(gold, "gold")
    _check_disjoint(pred, "predicted")
    if mode is EvalMode.TYPE and any(s.concept_id is None for s in [*gold, *pred]):
        raise EvaluationError("entity-type scoring needs a concept id on every span")

    candidates = []
    for gi, g in enumerate(gold):
        for pi, p in enumerate(pred):
            overlap = g.overlap(p)
            if overlap > 0:
                candidates.append((-overlap, g.start, p.start, gi, pi))
    candidates.sort()

    counts = EvalCounts()
    used_gold, used_pred = set(), set()
    for _, _, _, gi, pi in candidates:
        if gi in used_gold or pi in used_pred:
            continue
        used_gold.add(gi)
        used_pred.add(pi)
        g, p = gold[gi], pred[pi]
        identical = (g.start, g.end) == (p.start, p.end)
        if mode is EvalMode.TYPE:
            if g.concept_id == p.concept_id:
                counts.COR += 1
            else:
                counts.INC += 1
        elif identical:
            counts.COR += 1
        elif mode is EvalMode.EXACT:
            counts.INC += 1
        else:
            counts.PAR += 1
    counts.MIS = len(gold) - len(used_gold)
    counts.SPU = len(pred) - len(used_pred)
    return counts


def score(c: EvalCounts, mode: EvalMode) -> tuple[float, float, float]:
    hits = c.COR + 0.5 * c.PAR if mode is EvalMode.PARTIAL else float(c.COR)
    precision = hits / c.actual if c.actual else 0.0
    recall = hits / c.possible if c.possible else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


@dataclass
class ModeResult:
    counts: EvalCounts
    precision: float
    recall: float
    f1: float


@dataclass
class EvalReport:
    modes: dict[EvalMode, ModeResult]
    records: int = 0
    subset: Subset = Subset.ALL

    @classmethod
    def from_counts(
        cls, totals: dict[EvalMode, EvalCounts], records: int, subset: Subset = Subset.ALL
    ) -> "EvalReport":
        modes = {mode: ModeResult(c, *score(c, mode)) for mode, c in totals.items()}
        return cls(modes, records, subset)

    def __getitem__(self, mode: EvalMode) -> ModeResult:
        return self.modes[mode]

    def to_json(self) -> dict:
        out = {"records": self.records, "subset": self.subset.value}
        for mode, result in self.modes.items():
            out[mode.value] = {
                "counts": asdict(result.counts),
                "precision": result.precision,
                "recall": result.recall,
                "f1": result.f1,
            }
        return out

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            json.dump(self.to_json(), handle, indent=2, sort_keys=True)
            handle.write("\n")


def typed_spans(rec: AnnotatedRecord) -> list[TypedSpan]:
    return [TypedSpan(a.span.start, a.span.end, a.concept_id) for a in rec.annotations]


def default_modes(
    gold: Sequence[AnnotatedRecord], pred: Sequence[AnnotatedRecord]
) -> tuple[EvalMode, ...]:
    typed = all(a.concept_id is not None for rec in (*gold, *pred) for a in rec.annotations)
    if not typed:
        logger.info("Some spans carry no concept; entity-type scoring is skipped")
        return (EvalMode.PARTIAL, EvalMode.EXACT)
    return tuple(EvalMode)


def evaluate_records(
    gold: Sequence[AnnotatedRecord],
    pred: Sequence[AnnotatedRecord],
    modes: Sequence[EvalMode] | None = None,
    subset: Subset = Subset.ALL,
    sep_cfg: SeparatorConfig | None = None,
) -> EvalReport:
    """Micro-averaged report; gold records with no prediction count all their spans as missed.

    With ``modes=None`` the boundary modes are always scored and entity-type
    scoring is added when every gold and predicted span carries a concept, so
    untyped tagger output can be scored as it is.
    """
    if modes is None:
        modes = default_modes(gold, pred)
    gold_ids = {r.record_id for r in gold}
    pred_by_id = {}
    for rec in pred:
        if rec.record_id not in gold_ids:
            raise EvaluationError(f"predicted record '{rec.record_id}' is not in the gold set")
        pred_by_id[rec.record_id] = rec

    totals = {mode: EvalCounts() for mode in modes}
    scored = 0
    for rec in gold:
        if subset is not Subset.ALL:
            with_punct = has_active_separator(rec.record, sep_cfg)
            if with_punct != (subset is Subset.WITH_PUNCT):
                continue
        scored += 1
        gold_spans = typed_spans(rec)
        pred_rec = pred_by_id.get(rec.record_id)
        pred_spans = typed_spans(pred_rec) if pred_rec is not None else []
        for mode in modes:
            try:
                totals[mode] = totals[mode] + align(gold_spans, pred_spans, mode)
            except EvaluationError as e:
                raise EvaluationError(f"record '{rec.record_id}': {e.detail}")
    report = EvalReport.from_counts(totals, scored, subset)
    for mode, result in report.modes.items():
        logger.info(
            "%s: P=%.4f R=%.4f F1=%.4f (%s)",
            mode.value,
            result.precision,
            result.recall,
            result.f1,
            asdict(result.counts),
        )
    return report


def evaluate_corpus(
    gold_file: str,
    pred_file: str,
    subset: Subset = Subset.ALL,
    sep_cfg: SeparatorConfig | None = None,
    modes: Sequence[EvalMode] | None = None,
) -> EvalReport:
    gold = read_annotation_file(gold_file, strict=False)
    pred = read_annotation_file(pred_file, strict=False)
    try:
        return evaluate_records(gold, pred, modes, subset, sep_cfg)
    except EvaluationError as e:
        raise EvaluationError(e.detail, path=pred_file)
