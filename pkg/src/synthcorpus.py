"""Seeded generator of synthetic ontologies and annotated complaint-style corpora.

Records are a few symptom mentions joined by separator punctuation, with
optional typos, abbreviations, filler words and shared-token constructions
("neck/back pain"). Gold spans are computed while the text is assembled and
remapped when separators are removed.
"""

import logging
from collections import defaultdict
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from annotations import AnnotatedRecord, WeakAnnotation
from errors import ConfigError
from ontology import Concept, Ontology, make_concept
from textprep import CharSpan, Record, SeparatorConfig, drop_separators, tokenize
from utils.utils import derive_seed

logger = logging.getLogger(__name__)

SYMPTOM_HEADS = (
    "pain", "ache", "fever", "cough", "rash", "swelling", "bleeding", "weakness",
    "numbness", "nausea", "vomiting", "dizziness", "injury", "burn", "cramp", "itching",
    "headache", "laceration", "fracture", "sprain", "redness", "discharge", "tremor",
    "stiffness", "wheezing", "fatigue", "chills", "spasm", "bruise", "lesion",
)
CHILD_QUALIFIERS = (
    "ruq", "rlq", "luq", "llq", "upper", "lower", "anterior", "posterior", "bilateral", "distal",
)
DEFAULT_FILLER = (
    "severe", "mild", "r", "l", "x3", "days", "since", "yesterday", "intermittent",
    "worsening", "acute", "chronic",
)
DEFAULT_ABBREVIATIONS = {
    "headache": "ha",
    "fever": "fvr",
    "vomiting": "vom",
    "nausea": "naus",
    "weakness": "wkns",
    "swelling": "swlg",
    "laceration": "lac",
    "injury": "inj",
    "bilateral": "bil",
    "upper": "upr",
    "lower": "lwr",
    "posterior": "post",
    "anterior": "ant",
}
JOINERS = (", ", ",", "; ", "/", " / ", " + ", " & ", ". ", ": ")

_ONSETS = ("b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "pl", "st")
_VOWELS = ("a", "e", "i", "o", "u")
_CODAS = ("", "", "n", "r", "l", "s", "m")

_KEYBOARD_ROWS = ("qwertyuiop", "asdfghjkl", "zxcvbnm")


def _keyboard_neighbors() -> dict[str, str]:
    neighbors = {}
    for r, row in enumerate(_KEYBOARD_ROWS):
        for c, char in enumerate(row):
            near = set()
            for rr in (r - 1, r, r + 1):
                if 0 <= rr < len(_KEYBOARD_ROWS):
                    for cc in (c - 1, c, c + 1):
                        if 0 <= cc < len(_KEYBOARD_ROWS[rr]):
                            near.add(_KEYBOARD_ROWS[rr][cc])
            near.discard(char)
            neighbors[char] = "".join(sorted(near))
    return neighbors


KEYBOARD_NEIGHBORS = _keyboard_neighbors()


@dataclass(frozen=True)
class NoiseConfig:
    typo_rate: float = 0.05
    canonical_weight: float = 0.5
    abbreviation_map: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_ABBREVIATIONS))
    abbreviation_rate: float = 0.1
    no_punct_prob: float = 0.4
    filler_vocab: tuple[str, ...] = DEFAULT_FILLER
    filler_rate: float = 0.2
    entities_per_record: tuple[float, ...] = (0.35, 0.35, 0.2, 0.1)
    shared_token_rate: float = 0.05

    def __post_init__(self):
        for name in ("typo_rate", "canonical_weight", "abbreviation_rate", "no_punct_prob",
                     "filler_rate", "shared_token_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        weights = self.entities_per_record
        if not weights or any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ConfigError("entities_per_record needs non-negative weights with a positive sum")

    @classmethod
    def zero(cls, entities_per_record: tuple[float, ...] = (1.0,)) -> "NoiseConfig":
        return cls(
            typo_rate=0.0,
            abbreviation_rate=0.0,
            no_punct_prob=0.0,
            filler_rate=0.0,
            shared_token_rate=0.0,
            entities_per_record=entities_per_record,
        )

    def with_overrides(self, **changes) -> "NoiseConfig":
        return replace(self, **changes)


def corrupt_string(s: str, typo_rate: float, rng: np.random.Generator) -> str:
    """Per-character typos: adjacent-key substitution, transposition, deletion or duplication.

    Spaces are never edited and a one-character word is never deleted, so word
    boundaries survive. The result is never empty.
    """
    if not s:
        raise ValueError("cannot corrupt an empty string")
    if typo_rate <= 0.0:
        return s
    n = len(s)
    draws = rng.random(n)
    ops = rng.integers(0, 4, size=n)
    picks = rng.integers(0, 1 << 16, size=n)
    out: list[str] = []
    i = 0
    while i < n:
        char = s[i]
        if char == " " or draws[i] >= typo_rate:
            out.append(char)
            i += 1
            continue
        op = int(ops[i])
        if op == 1 and (i + 1 >= n or s[i + 1] == " "):
            op = 3
        if op == 2 and (not out or out[-1] == " "):
            # keep the first surviving letter of every word
            op = 3
        if op == 0:
            near = KEYBOARD_NEIGHBORS.get(char)
            out.append(near[int(picks[i]) % len(near)] if near else char)
        elif op == 1:
            out.append(s[i + 1])
            out.append(char)
            i += 1
        elif op == 3:
            out.append(char)
            out.append(char)
        i += 1
    result = "".join(out)
    return result if result.strip() else s + s[-1]


def _pronounceable(rng: np.random.Generator, syllables: int) -> str:
    parts = []
    for _ in range(syllables):
        parts.append(_ONSETS[rng.integers(len(_ONSETS))])
        parts.append(_VOWELS[rng.integers(len(_VOWELS))])
    parts.append(_CODAS[rng.integers(len(_CODAS))])
    return "".join(parts)


def generate_ontology(
    n_concepts: int,
    synonyms_per: int = 3,
    seed: int = 42,
    n_children: int = 0,
    combo_rate: float = 0.05,
) -> tuple[Ontology, list[str]]:
    """Build ``n_concepts`` concepts, ``n_children`` of them children of root concepts.

    Returns the ontology and the child ids, which ``merge_children`` folds back.
    """
    if n_concepts < 1:
        raise ConfigError(f"n_concepts must be >= 1, got {n_concepts}")
    if synonyms_per < 1:
        raise ConfigError(f"synonyms_per must be >= 1, got {synonyms_per}")
    if not 0 <= n_children < n_concepts:
        raise ConfigError(f"n_children must be in [0, {n_concepts - 1}], got {n_children}")
    rng = np.random.default_rng(derive_seed(seed, "ontology"))
    reserved = set(SYMPTOM_HEADS) | set(CHILD_QUALIFIERS) | set(DEFAULT_FILLER) | {"and"}
    reserved |= set(DEFAULT_ABBREVIATIONS.values())
    used_synonyms: set[str] = set()
    used_modifiers: set[str] = set()
    n_roots = n_concepts - n_children
    width = max(4, len(str(n_concepts)))

    def claim(candidates: Sequence[str], limit: int) -> list[str]:
        claimed = []
        for candidate in candidates:
            if len(claimed) == limit:
                break
            if candidate not in used_synonyms:
                used_synonyms.add(candidate)
                claimed.append(candidate)
        return claimed

    def fresh_modifier() -> str:
        while True:
            word = _pronounceable(rng, int(rng.integers(1, 3)))
            if len(word) >= 3 and word not in used_modifiers and word not in reserved:
                used_modifiers.add(word)
                return word

    concepts: list[Concept] = []
    roots: list[Concept] = []
    heads = list(SYMPTOM_HEADS)
    for k in range(n_roots):
        concept_id = f"C{k:0{width}d}"
        wanted = int(rng.integers(1, synonyms_per + 1))
        if rng.random() < combo_rate:
            first, second = (heads[i] for i in rng.choice(len(heads), size=2, replace=False))
            canonical = f"{first} and {second}"
            variants = [canonical, f"{first[0]}/{second[0]}", f"{second} and {first}"]
            if canonical not in used_synonyms and variants[1] not in used_synonyms:
                concept = make_concept(concept_id, canonical, claim(variants, wanted))
                concepts.append(concept)
                roots.append(concept)
                continue
        canonical = ""
        while not canonical or canonical in used_synonyms:
            modifier = fresh_modifier()
            head = heads[int(rng.integers(len(heads)))]
            canonical = f"{modifier} {head}"
        variants = [canonical, f"{head} {modifier}", f"{modifier[:3]}{modifier[-1]} {head}"]
        concept = make_concept(concept_id, canonical, claim(variants, wanted))
        concepts.append(concept)
        roots.append(concept)

    merge_ids = []
    pairs = [(q, r) for r in range(len(roots)) for q in range(len(CHILD_QUALIFIERS))]
    order = rng.permutation(len(pairs))
    made = 0
    for p in order:
        if made == n_children:
            break
        q, r = pairs[int(p)]
        parent = roots[r]
        qualifier = CHILD_QUALIFIERS[q]
        canonical = f"{qualifier} {parent.canonical}"
        variants = claim([canonical, f"{parent.canonical} {qualifier}"], int(rng.integers(1, 3)))
        if canonical not in variants:
            continue
        concept_id = f"C{n_roots + made:0{width}d}"
        concepts.append(make_concept(concept_id, canonical, variants, parent=parent.id))
        merge_ids.append(concept_id)
        made += 1
    if made < n_children:
        raise ConfigError(f"could only place {made} of {n_children} child concepts")
    ontology = Ontology(concepts)
    logger.info(
        "Generated ontology: %d concepts (%d children), %d synonyms",
        len(ontology),
        n_children,
        len(ontology.synonym_index),
    )
    return ontology, merge_ids


def _separator_survives(left: str, joiner: str, right: str, cfg: SeparatorConfig) -> bool:
    """Whether the joiner's separator stays active between these two pieces."""
    text = f"{left}{joiner}{right}"
    position = len(left) + len(joiner) - len(joiner.lstrip())
    for token in tokenize(text, cfg):
        if token.span.start == position:
            return token.is_separator
    return False


@dataclass
class _Piece:
    text: str
    spans: list[tuple[int, int, str]]


class CorpusGenerator:
    def __init__(self, ont: Ontology, noise: NoiseConfig, seed: int, sep_cfg: SeparatorConfig | None = None):
        if len(ont) == 0:
            raise ConfigError("cannot generate a corpus from an empty ontology")
        self.ont = ont
        self.noise = noise
        self.seed = seed
        self.sep_cfg = sep_cfg or SeparatorConfig()
        self.concept_ids = ont.concept_ids()
        self.synonyms = {c.id: sorted(c.synonyms) for c in ont.concepts.values()}
        weights = np.asarray(noise.entities_per_record, dtype=np.float64)
        self.k_probs = weights / weights.sum()
        self.by_head: dict[str, list[Concept]] = defaultdict(list)
        for concept in ont.concepts.values():
            words = concept.canonical.split(" ")
            if len(words) == 2 and len(words[0]) >= self.sep_cfg.slash_min_run:
                self.by_head[words[1]].append(concept)
        self.joiners = [j for j in JOINERS if j.strip() in self.sep_cfg.separators] or [", "]

    def surface(self, concept: Concept, rng: np.random.Generator) -> str:
        others = [s for s in self.synonyms[concept.id] if s != concept.canonical]
        if not others or rng.random() < self.noise.canonical_weight:
            text = concept.canonical
        else:
            text = others[int(rng.integers(len(others)))]
        words = []
        for word in text.split(" "):
            short = self.noise.abbreviation_map.get(word)
            if short and rng.random() < self.noise.abbreviation_rate:
                word = short
            words.append(word)
        text = " ".join(words)
        return corrupt_string(text, self.noise.typo_rate, rng)

    def shared_token_piece(self, concept: Concept, rng: np.random.Generator) -> _Piece | None:
        words = concept.canonical.split(" ")
        if len(words) != 2:
            return None
        partners = [c for c in self.by_head.get(words[1], []) if c.id != concept.id]
        if not partners or len(words[0]) < self.sep_cfg.slash_min_run:
            return None
        partner = partners[int(rng.integers(len(partners)))]
        first = partner.canonical.split(" ")[0]
        text = f"{first}/{concept.canonical}"
        return _Piece(text, [(0, len(first), partner.id), (len(first) + 1, len(text), concept.id)])

    def piece(self, concept: Concept, rng: np.random.Generator) -> _Piece:
        if rng.random() < self.noise.shared_token_rate:
            shared = self.shared_token_piece(concept, rng)
            if shared is not None:
                return shared
        text = self.surface(concept, rng)
        spans = [(0, len(text), concept.id)]
        if rng.random() < self.noise.filler_rate:
            filler = self.noise.filler_vocab[int(rng.integers(len(self.noise.filler_vocab)))]
            if rng.random() < 0.5:
                text = f"{filler} {text}"
                spans = [(s + len(filler) + 1, e + len(filler) + 1, c) for s, e, c in spans]
            else:
                text = f"{text} {filler}"
        return _Piece(text, spans)

    def record(self, index: int) -> tuple[Record, AnnotatedRecord]:
        rng = np.random.default_rng(derive_seed(self.seed, "record", index))
        record_id = f"r{index:06d}"
        k = min(len(self.concept_ids), 1 + int(rng.choice(len(self.k_probs), p=self.k_probs)))
        chosen = rng.choice(len(self.concept_ids), size=k, replace=False)
        text = ""
        gold: list[tuple[int, int, str]] = []
        for n, c in enumerate(chosen):
            piece = self.piece(self.ont[self.concept_ids[int(c)]], rng)
            if n > 0:
                joiner = self.joiners[int(rng.integers(len(self.joiners)))]
                if not _separator_survives(text, joiner, piece.text, self.sep_cfg):
                    joiner = ", "
                text += joiner
            gold.extend((s + len(text), e + len(text), cid) for s, e, cid in piece.spans)
            text += piece.text
        rec = Record(record_id, text)
        spans = [(CharSpan(s, e), cid) for s, e, cid in gold]
        if rng.random() < self.noise.no_punct_prob:
            dropped = drop_separators(rec, 1.0, rng, self.sep_cfg)
            rec = dropped.record
            spans = [(dropped.offsets.map_span(span), cid) for span, cid in spans]
        annotations = [WeakAnnotation(record_id, span, cid) for span, cid in spans if span is not None]
        return rec, AnnotatedRecord(record_id, rec.text, sorted(annotations, key=lambda a: a.span))


def generate_corpus(
    ont: Ontology,
    n_records: int,
    noise: NoiseConfig,
    seed: int = 42,
    sep_cfg: SeparatorConfig | None = None,
) -> tuple[list[Record], list[AnnotatedRecord]]:
    if n_records < 0:
        raise ConfigError(f"n_records must be >= 0, got {n_records}")
    generator = CorpusGenerator(ont, noise, seed, sep_cfg)
    records, gold = [], []
    for index in range(n_records):
        rec, annotated = generator.record(index)
        records.append(rec)
        gold.append(annotated)
    logger.info(
        "Generated %d records with %d gold mentions",
        len(records),
        sum(len(g.annotations) for g in gold),
    )
    return records, gold
