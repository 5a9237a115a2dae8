"""Span annotations and the JSON-lines annotation file format.

One line per record::

    {"record_id": ..., "text": ..., "annotations": [{"start", "end", "concept",
     "confidence", "stage"}], "unmatched_spans": [{"start", "end"}]}

Gold files use the same layout; ``confidence``/``stage``/``unmatched_spans``
are optional there and ignored by the evaluator.
"""

import logging
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum

from errors import AnnotationError
from textprep import CharSpan, Record, normalize
from utils.utils import read_jsonl, write_jsonl

logger = logging.getLogger(__name__)


class MatchStage(str, Enum):
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"

    @classmethod
    def parse_list(cls, text: str) -> list["MatchStage"]:
        stages = []
        for part in text.split(","):
            part = part.strip().upper()
            if not part:
                continue
            try:
                stages.append(cls(part))
            except ValueError:
                raise AnnotationError(f"unknown matching stage '{part}'")
        return sorted(set(stages), key=lambda s: s.value)


@dataclass(frozen=True)
class WeakAnnotation:
    """A (span, concept, confidence) label; gold labels carry ``stage=None``."""

    record_id: str
    span: CharSpan
    concept_id: str | None
    confidence: float = 1.0
    stage: MatchStage | None = None

    def __post_init__(self):
        if not 0.0 < self.confidence <= 1.0:
            raise AnnotationError(
                f"record '{self.record_id}': confidence {self.confidence} outside (0, 1]"
            )
        if self.stage is MatchStage.S1 and self.confidence != 1.0:
            raise AnnotationError(f"record '{self.record_id}': S1 confidence must be 1.0")

    def to_json(self) -> dict:
        row = {"start": self.span.start, "end": self.span.end, "concept": self.concept_id}
        row["confidence"] = self.confidence
        if self.stage is not None:
            row["stage"] = self.stage.value
        return row


@dataclass
class AnnotatedRecord:
    record_id: str
    text: str
    annotations: list[WeakAnnotation] = field(default_factory=list)
    unmatched_spans: list[CharSpan] = field(default_factory=list)

    @property
    def record(self) -> Record:
        return Record(self.record_id, self.text)

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "text": self.text,
            "annotations": [a.to_json() for a in self.annotations],
            "unmatched_spans": [{"start": s.start, "end": s.end} for s in self.unmatched_spans],
        }


def _parse_span(obj: dict, text: str, path: str, line: int) -> CharSpan:
    try:
        start, end = int(obj["start"]), int(obj["end"])
    except (KeyError, TypeError, ValueError):
        raise AnnotationError("span needs integer 'start' and 'end'", path=path, line=line)
    if not 0 <= start < end <= len(text):
        raise AnnotationError(
            f"span ({start}, {end}) outside record of length {len(text)}", path=path, line=line
        )
    return CharSpan(start, end)


def _object_list(obj: dict, key: str, path: str, line: int) -> list[dict]:
    items = obj.get(key)
    if items is None and key not in obj:
        return []
    if not isinstance(items, list) or not all(isinstance(item, dict) for item in items):
        raise AnnotationError(f"'{key}' must be a list of objects", path=path, line=line)
    return items


def read_annotation_file(path: str, strict: bool = True) -> list[AnnotatedRecord]:
    """Read an annotation file.

    ``strict=False`` is the evaluator's view: ``confidence`` and ``stage`` are
    not read, so any value (or none) is accepted for them.
    """
    records = []
    seen: set[str] = set()
    for line_no, obj in read_jsonl(path):
        record_id = obj.get("record_id", obj.get("id"))
        text = obj.get("text", "")
        if not isinstance(record_id, str) or not isinstance(text, str):
            raise AnnotationError("'record_id' and 'text' must be strings", path=path, line=line_no)
        if record_id in seen:
            raise AnnotationError(f"duplicate record id '{record_id}'", path=path, line=line_no)
        seen.add(record_id)
        annotations = []
        for ann in _object_list(obj, "annotations", path, line_no):
            span = _parse_span(ann, text, path, line_no)
            concept_id = ann.get("concept")
            if concept_id is not None and not isinstance(concept_id, str):
                raise AnnotationError("'concept' must be a string or null", path=path, line=line_no)
            if not strict:
                annotations.append(WeakAnnotation(record_id, span, concept_id))
                continue
            stage = ann.get("stage")
            try:
                annotations.append(
                    WeakAnnotation(
                        record_id,
                        span,
                        concept_id,
                        float(ann.get("confidence", 1.0)),
                        MatchStage(stage) if stage else None,
                    )
                )
            except AnnotationError as e:
                raise AnnotationError(e.detail, path=path, line=line_no)
            except (TypeError, ValueError) as e:
                raise AnnotationError(str(e), path=path, line=line_no)
        unmatched = [
            _parse_span(s, text, path, line_no)
            for s in _object_list(obj, "unmatched_spans", path, line_no)
        ]
        records.append(AnnotatedRecord(record_id, text, annotations, unmatched))
    return records


def write_annotation_file(path: str, records: Iterable[AnnotatedRecord]) -> int:
    return write_jsonl(path, (r.to_json() for r in records))


def read_corpus(path: str) -> list[Record]:
    """Corpus file: one ``{"id", "text"}`` object per line; text is normalized on read."""
    records = []
    for line_no, obj in read_jsonl(path):
        record_id = obj.get("id", obj.get("record_id"))
        text = obj.get("text")
        if not isinstance(record_id, str) or not isinstance(text, str):
            raise AnnotationError("corpus lines need string 'id' and 'text'", path=path, line=line_no)
        records.append(Record(record_id, normalize(text)))
    return records


def write_corpus(path: str, records: Iterable[Record]) -> int:
    return write_jsonl(path, ({"id": r.id, "text": r.text} for r in records))
