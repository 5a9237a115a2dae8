"""Normalization, separator-aware tokenization and chunking of short records.

All offsets are character offsets into the *normalized* record text.
"""

import logging
import re
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_SEPARATORS = (",", ";", "/", "\\", "+", "&", "|", ":", ".", "?")

_TOKEN_PATTERN = re.compile(r"[^\W_]+|\S")


@dataclass(frozen=True, order=True)
class CharSpan:
    start: int
    end: int

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def overlaps(self, other: "CharSpan") -> bool:
        return self.start < other.end and other.start < self.end

    def overlap_length(self, other: "CharSpan") -> int:
        return max(0, min(self.end, other.end) - max(self.start, other.start))

    def contains(self, other: "CharSpan") -> bool:
        return self.start <= other.start and other.end <= self.end


@dataclass(frozen=True)
class Record:
    id: str
    text: str


@dataclass(frozen=True)
class Token:
    text: str
    span: CharSpan
    is_separator: bool = False

    @property
    def is_word(self) -> bool:
        return self.text.isalnum()


@dataclass(frozen=True)
class Chunk:
    tokens: tuple[Token, ...]
    span: CharSpan
    text: str

    @property
    def word_tokens(self) -> list[str]:
        words = [token.text for token in self.tokens if token.is_word]
        return words or [token.text for token in self.tokens]


@dataclass(frozen=True)
class SeparatorConfig:
    separators: tuple[str, ...] = DEFAULT_SEPARATORS
    slash_min_run: int = 2
    period_digit_guard: bool = True

    def __post_init__(self):
        if len(self.separators) != 10 or len(set(self.separators)) != 10:
            raise ValueError("exactly 10 distinct separator characters are required")
        if any(len(sep) != 1 or sep.isalnum() or sep.isspace() for sep in self.separators):
            raise ValueError("separators must be single punctuation characters")
        if self.slash_min_run < 1:
            raise ValueError("slash_min_run must be >= 1")


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def _separator_is_active(
    text: str, tokens: list[tuple[str, int, int]], index: int, cfg: SeparatorConfig
) -> bool:
    char, start, end = tokens[index]
    if char not in cfg.separators:
        return False
    if char == "." and cfg.period_digit_guard:
        if 0 < start and end < len(text) and text[start - 1].isdigit() and text[end].isdigit():
            return False
    if char == "/":
        # only alphanumeric neighbors can veto the slash
        for neighbor in (index - 1, index + 1):
            if 0 <= neighbor < len(tokens):
                neighbor_text = tokens[neighbor][0]
                if neighbor_text.isalnum() and len(neighbor_text) < cfg.slash_min_run:
                    return False
    return True


def tokenize(text: str, cfg: SeparatorConfig | None = None) -> list[Token]:
    cfg = cfg or SeparatorConfig()
    raw = [(m.group(), m.start(), m.end()) for m in _TOKEN_PATTERN.finditer(text)]
    tokens = []
    for index, (token_text, start, end) in enumerate(raw):
        is_separator = len(token_text) == 1 and _separator_is_active(text, raw, index, cfg)
        tokens.append(Token(token_text, CharSpan(start, end), is_separator))
    return tokens


def _chunks_from_tokens(text: str, tokens: list[Token]) -> list[Chunk]:
    chunks = []
    run: list[Token] = []
    for token in tokens + [None]:
        if token is None or token.is_separator:
            if run:
                span = CharSpan(run[0].span.start, run[-1].span.end)
                chunks.append(Chunk(tuple(run), span, text[span.start : span.end]))
            run = []
        else:
            run.append(token)
    return chunks


def split_chunks(rec: Record, cfg: SeparatorConfig | None = None) -> list[Chunk]:
    return _chunks_from_tokens(rec.text, tokenize(rec.text, cfg))


def has_active_separator(rec: Record, cfg: SeparatorConfig | None = None) -> bool:
    return any(token.is_separator for token in tokenize(rec.text, cfg))


def partition_by_punctuation(
    records: list[Record], cfg: SeparatorConfig | None = None
) -> tuple[list[Record], list[Record]]:
    """Split records into (with active separators, without any)."""
    with_punct, no_punct = [], []
    for rec in records:
        (with_punct if has_active_separator(rec, cfg) else no_punct).append(rec)
    return with_punct, no_punct


@dataclass
class OffsetMap:
    """Old character index -> new character index (-1 where the character is gone)."""

    mapping: np.ndarray
    new_length: int = 0

    @classmethod
    def identity(cls, length: int) -> "OffsetMap":
        return cls(np.arange(length, dtype=np.int64), length)

    def map_span(self, span: CharSpan) -> CharSpan | None:
        surviving = self.mapping[span.start : span.end]
        surviving = surviving[surviving >= 0]
        if surviving.size == 0:
            return None
        return CharSpan(int(surviving[0]), int(surviving[-1]) + 1)


@dataclass
class DroppedRecord:
    record: Record
    offsets: OffsetMap
    dropped: list[CharSpan] = field(default_factory=list)


def drop_separators(
    rec: Record,
    p: float,
    rng: np.random.Generator,
    cfg: SeparatorConfig | None = None,
) -> DroppedRecord:
    """Replace each active separator by a space with probability ``p`` and re-normalize.

    One uniform draw is consumed per active separator, in text order.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability must be in [0, 1], got {p}")
    text = rec.text
    separators = [token for token in tokenize(text, cfg) if token.is_separator]
    draws = rng.random(len(separators)) if separators else np.empty(0)
    dropped = [tok.span for tok, u in zip(separators, draws) if u < p]
    if not dropped:
        return DroppedRecord(rec, OffsetMap.identity(len(text)), [])

    edited = list(text)
    for span in dropped:
        edited[span.start] = " "
    mapping = np.full(len(text), -1, dtype=np.int64)
    out: list[str] = []
    pending_space = False
    for index, char in enumerate(edited):
        if char.isspace():
            pending_space = bool(out)
            continue
        if pending_space:
            out.append(" ")
            pending_space = False
        mapping[index] = len(out)
        out.append(char)
    new_text = "".join(out)
    return DroppedRecord(Record(rec.id, new_text), OffsetMap(mapping, len(new_text)), dropped)
