"""BIO mention tagger trained from weak or gold span labels.

The model scores each token with a log-linear emission term over hashed
feature templates (plus optional dense embedding features) and a tag
transition term conditioned on the previous tag. Training minimizes the
per-token cross-entropy against confidence-smoothed targets, each token
weighted by its label confidence. Decoding is a constrained Viterbi search:
``O -> I`` and ``start -> I`` are forbidden and separator tokens are always O.
"""

import logging
import os
from collections import Counter
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from annotations import AnnotatedRecord, MatchStage, WeakAnnotation
from embedding import EmbeddingTable
from errors import AnnotationError, ConfigError, DataError, FingerprintError
from ontology import Ontology, lookup_exact
from services.match_providers import ApproxMatchProvider, MatchConfig
from textprep import (
    CharSpan,
    Record,
    SeparatorConfig,
    Token,
    drop_separators,
    split_chunks,
    tokenize,
)
from utils.utils import (
    read_model_container,
    sha256_text,
    stable_hash,
    write_model_container,
)

logger = logging.getLogger(__name__)

MAGIC = b"CCTG"
FORMAT_VERSION = 1
TEMPLATE_VERSION = "bio-v1:bias,w,shape,sep,pre1-4,suf1-4,c3,w[-2..2],dense"
START = 3


class BioTag(str, Enum):
    B = "B"
    I = "I"
    O = "O"


TAGS = (BioTag.B, BioTag.I, BioTag.O)
TAG_INDEX = {tag: i for i, tag in enumerate(TAGS)}


class TrainingStrategy(str, Enum):
    WEAK_ONLY = "weak"
    SUPERVISED = "supervised"
    FINE_TUNE = "finetune"


class RefineMode(str, Enum):
    S1 = "s1"
    S1S2 = "s1s2"


@dataclass
class TaggedSequence:
    record_id: str
    text: str
    tokens: list[Token]
    tags: list[BioTag]
    weights: list[float]

    def __post_init__(self):
        if not len(self.tokens) == len(self.tags) == len(self.weights):
            raise AnnotationError(
                f"record '{self.record_id}': tokens, tags and weights differ in length"
            )
        if any(not 0.0 <= w <= 1.0 for w in self.weights):
            raise AnnotationError(f"record '{self.record_id}': weights must lie in [0, 1]")

    @property
    def has_separator(self) -> bool:
        return any(t.is_separator for t in self.tokens)


@dataclass(frozen=True)
class Mention:
    record_id: str
    span: CharSpan
    token_range: tuple[int, int]

    def text(self, rec: Record) -> str:
        return rec.text[self.span.start : self.span.end]


@dataclass(frozen=True)
class TaggerConfig:
    epsilon_max: float = 0.3
    w_unmatched: float = 0.3
    epochs: int = 10
    finetune_epochs: int = 10
    learning_rate: float = 0.1
    batch_size: int = 16
    label_smoothing: bool = True
    hash_buckets: int = 1 << 18
    use_embeddings: bool = True
    tighten_spans: bool = True
    tighten_min_df: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.epsilon_max < 1.0:
            raise ConfigError(f"epsilon_max must be in [0, 1), got {self.epsilon_max}")
        if not 0.0 <= self.w_unmatched <= 1.0:
            raise ConfigError(f"w_unmatched must be in [0, 1], got {self.w_unmatched}")
        if not 0.0 <= self.tighten_min_df <= 1.0:
            raise ConfigError(f"tighten_min_df must be in [0, 1], got {self.tighten_min_df}")
        if self.epochs < 0 or self.finetune_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.hash_buckets < 16:
            raise ConfigError("hash_buckets must be >= 16")


# ---------------------------------------------------------------- encoding


def encode_bio(
    rec: Record,
    anns: Sequence[WeakAnnotation],
    sep_cfg: SeparatorConfig | None = None,
    unmatched_spans: Sequence[CharSpan] | None = None,
    w_unmatched: float = 0.3,
) -> TaggedSequence:
    """Tag a record from span labels.

    ``unmatched_spans=None`` means gold data: every O token weighs 1.0. For weak
    data, O tokens inside unmatched chunks (or every token of a record with no
    labels at all) take ``w_unmatched``.
    """
    tokens = tokenize(rec.text, sep_cfg)
    by_start = {t.span.start: i for i, t in enumerate(tokens)}
    by_end = {t.span.end: i for i, t in enumerate(tokens)}
    tags = [BioTag.O] * len(tokens)
    weights = [1.0] * len(tokens)

    ordered = sorted(anns, key=lambda a: (a.span.start, a.span.end))
    for prev, ann in zip(ordered, ordered[1:]):
        if prev.span.overlaps(ann.span):
            raise AnnotationError(
                f"record '{rec.id}': overlapping annotations {prev.span} and {ann.span}"
            )
    for ann in ordered:
        first, last = by_start.get(ann.span.start), by_end.get(ann.span.end)
        if first is None or last is None:
            raise AnnotationError(
                f"record '{rec.id}': span ({ann.span.start}, {ann.span.end}) "
                "is not on token boundaries"
            )
        begin = True
        for k in range(first, last + 1):
            if tokens[k].is_separator:
                begin = True
                continue
            tags[k] = BioTag.B if begin else BioTag.I
            weights[k] = ann.confidence
            begin = False

    if unmatched_spans is not None:
        if not ordered:
            weights = [w_unmatched] * len(tokens)
        else:
            for k, token in enumerate(tokens):
                if tags[k] is BioTag.O and any(s.contains(token.span) for s in unmatched_spans):
                    weights[k] = w_unmatched
    return TaggedSequence(rec.id, rec.text, tokens, tags, weights)


def synonym_vocabulary(ont: Ontology, sep_cfg: SeparatorConfig | None = None) -> frozenset[str]:
    return frozenset(
        token.text
        for synonym, _ in ont.synonym_pairs()
        for token in tokenize(synonym, sep_cfg)
        if token.is_word
    )


def trimmable_words(
    records: Sequence[AnnotatedRecord],
    ont: Ontology,
    min_df: float = 0.01,
    sep_cfg: SeparatorConfig | None = None,
) -> frozenset[str]:
    """Words found in no synonym that still occur in at least ``min_df`` of the records.

    These are the recurring modifiers ("severe", "x3", "since"); typo variants
    and rare abbreviations stay below the floor.
    """
    vocabulary = synonym_vocabulary(ont, sep_cfg)
    df: Counter = Counter()
    for rec in records:
        df.update({t.text for t in tokenize(rec.text, sep_cfg) if t.is_word and t.text not in vocabulary})
    floor = max(2.0, min_df * len(records))
    return frozenset(word for word, count in df.items() if count >= floor)


def tighten_record(
    rec: AnnotatedRecord,
    ont: Ontology,
    trimmable: frozenset[str],
    sep_cfg: SeparatorConfig | None = None,
) -> tuple[AnnotatedRecord, int]:
    """Narrow chunk labels that S1 missed down to an exact synonym inside the chunk.

    Trimmable words are stripped from both chunk edges. When the rest is an
    exact synonym it replaces the chunk's label (or fills an unmatched chunk)
    as an S1 label, and the stripped words become confident O tokens.
    Returns the record and the number of chunks tightened.
    """
    by_span = {a.span: a for a in rec.annotations}
    unmatched = set(rec.unmatched_spans)
    replaced: dict[CharSpan, WeakAnnotation] = {}
    for chunk in split_chunks(rec.record, sep_cfg):
        current = by_span.get(chunk.span)
        if current is None and chunk.span not in unmatched:
            continue
        if current is not None and current.stage is MatchStage.S1:
            continue
        lo, hi = 0, len(chunk.tokens) - 1
        while lo <= hi and chunk.tokens[lo].text in trimmable:
            lo += 1
        while hi >= lo and chunk.tokens[hi].text in trimmable:
            hi -= 1
        if lo > hi or (lo == 0 and hi == len(chunk.tokens) - 1):
            continue
        span = CharSpan(chunk.tokens[lo].span.start, chunk.tokens[hi].span.end)
        concept_id = lookup_exact(ont, rec.text[span.start : span.end])
        if concept_id is not None:
            replaced[chunk.span] = WeakAnnotation(rec.record_id, span, concept_id, 1.0, MatchStage.S1)
    if not replaced:
        return rec, 0
    annotations = [replaced.get(a.span, a) for a in rec.annotations]
    annotations += [replaced[s] for s in rec.unmatched_spans if s in replaced]
    annotations.sort(key=lambda a: (a.span.start, a.span.end))
    still_unmatched = [s for s in rec.unmatched_spans if s not in replaced]
    return AnnotatedRecord(rec.record_id, rec.text, annotations, still_unmatched), len(replaced)


def tighten_weak_labels(
    records: Sequence[AnnotatedRecord],
    ont: Ontology,
    min_df: float = 0.01,
    sep_cfg: SeparatorConfig | None = None,
) -> list[AnnotatedRecord]:
    trimmable = trimmable_words(records, ont, min_df, sep_cfg)
    tightened, total = [], 0
    for rec in records:
        rec, count = tighten_record(rec, ont, trimmable, sep_cfg)
        tightened.append(rec)
        total += count
    logger.info(
        "Tightened %d weak labels to exact synonyms (%d trimmable words)", total, len(trimmable)
    )
    return tightened


def tag_runs(tags: Sequence[BioTag]) -> list[tuple[int, int]]:
    """Maximal ``B I*`` runs as inclusive (first, last) token indices."""
    runs = []
    start = None
    for i, tag in enumerate(tags):
        if tag is BioTag.B:
            if start is not None:
                runs.append((start, i - 1))
            start = i
        elif tag is BioTag.O:
            if start is not None:
                runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(tags) - 1))
    return runs


def repair_tags(tags: Sequence[BioTag]) -> list[BioTag]:
    """An I that does not continue a B/I run starts a new mention."""
    repaired = []
    for tag in tags:
        if tag is BioTag.I and (not repaired or repaired[-1] is BioTag.O):
            tag = BioTag.B
        repaired.append(tag)
    return repaired


def mentions_from_tags(record_id: str, tokens: Sequence[Token], tags: Sequence[BioTag]) -> list[Mention]:
    mentions = []
    for first, last in tag_runs(repair_tags(tags)):
        span = CharSpan(tokens[first].span.start, tokens[last].span.end)
        mentions.append(Mention(record_id, span, (first, last)))
    return mentions


def spans_from_tags(seq: TaggedSequence) -> list[CharSpan]:
    return [m.span for m in mentions_from_tags(seq.record_id, seq.tokens, seq.tags)]


def smooth_targets(tag: BioTag, confidence: float, epsilon_max: float = 0.3) -> np.ndarray:
    """Distribution over (B, I, O): ``(1 - eps) * onehot + eps / 3``, eps = min(eps_max, 1 - conf)."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence must be in [0, 1], got {confidence}")
    eps = min(epsilon_max, 1.0 - confidence)
    q = np.full(3, eps / 3.0)
    q[TAG_INDEX[tag]] += 1.0 - eps
    return q


def write_conll(path: str, sequences: Iterable[TaggedSequence]) -> int:
    """CoNLL-style TSV: token, tag, weight; a blank line between records."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for seq in sequences:
            for token, tag, weight in zip(seq.tokens, seq.tags, seq.weights):
                handle.write(f"{token.text}\t{tag.value}\t{weight:.6g}\n")
            handle.write("\n")
            count += 1
    return count


# ---------------------------------------------------------------- features


def word_shape(word: str) -> str:
    shape = []
    for char in word:
        code = "d" if char.isdigit() else "x" if char.isalpha() else char
        if not shape or shape[-1] != code:
            shape.append(code)
    return "".join(shape)


def token_features(tokens: Sequence[Token], i: int) -> list[str]:
    token = tokens[i]
    word = token.text
    features = ["bias", f"w={word}", f"shape={word_shape(word)}", f"sep={int(token.is_separator)}"]
    for k in range(1, min(4, len(word)) + 1):
        features.append(f"pre{k}={word[:k]}")
        features.append(f"suf{k}={word[-k:]}")
    wrapped = f"<{word}>"
    features.extend(f"c3={wrapped[j:j + 3]}" for j in range(len(wrapped) - 2))
    for offset in (-2, -1, 1, 2):
        j = i + offset
        if j < 0:
            context = "<s>"
        elif j >= len(tokens):
            context = "</s>"
        else:
            context = tokens[j].text
        features.append(f"w[{offset}]={context}")
    return features


def template_hash(hash_buckets: int, dense_dim: int) -> str:
    return sha256_text(f"{TEMPLATE_VERSION};buckets={hash_buckets};dense={dense_dim}")


@dataclass
class _Encoded:
    feat_idx: np.ndarray
    token_ptr: np.ndarray
    dense: np.ndarray | None
    separators: np.ndarray

    @property
    def n_tokens(self) -> int:
        return len(self.token_ptr)


def _encode_tokens(
    tokens: Sequence[Token], hash_buckets: int, embeddings: EmbeddingTable | None
) -> _Encoded:
    feat_idx, token_ptr = [], []
    for i in range(len(tokens)):
        token_ptr.append(len(feat_idx))
        feat_idx.extend(stable_hash(f) % hash_buckets for f in token_features(tokens, i))
    dense = None
    if embeddings is not None:
        dense = np.zeros((len(tokens), embeddings.dim), dtype=np.float64)
        for i, token in enumerate(tokens):
            if token.is_word:
                dense[i] = embeddings.word_vector(token.text)
    return _Encoded(
        np.array(feat_idx, dtype=np.int64),
        np.array(token_ptr, dtype=np.int64),
        dense,
        np.array([t.is_separator for t in tokens], dtype=bool),
    )


# ---------------------------------------------------------------- model


class TaggerModel:
    def __init__(
        self,
        config: TaggerConfig,
        separator_config: SeparatorConfig,
        dense_dim: int = 0,
        emission: np.ndarray | None = None,
        bias: np.ndarray | None = None,
        dense: np.ndarray | None = None,
        transitions: np.ndarray | None = None,
        metadata: dict | None = None,
    ):
        self.config = config
        self.separator_config = separator_config
        self.dense_dim = dense_dim
        self.emission = (
            emission if emission is not None else np.zeros((config.hash_buckets, 3))
        )
        self.bias = bias if bias is not None else np.zeros(3)
        self.dense = dense if dense is not None else np.zeros((dense_dim, 3))
        self.transitions = transitions if transitions is not None else np.zeros((4, 3))
        self.metadata = metadata or {}

    @property
    def template_hash(self) -> str:
        return template_hash(self.config.hash_buckets, self.dense_dim)

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "emission": self.emission,
            "bias": self.bias,
            "dense": self.dense,
            "transitions": self.transitions,
        }

    def check_embeddings(self, embeddings: EmbeddingTable | None) -> EmbeddingTable | None:
        if self.dense_dim == 0:
            return None
        if embeddings is None:
            raise ConfigError("this tagger uses embedding features; an embedding table is required")
        if embeddings.dim != self.dense_dim:
            raise FingerprintError(
                f"tagger expects {self.dense_dim}-dim embeddings, got {embeddings.dim}"
            )
        return embeddings

    def encode(self, tokens: Sequence[Token], embeddings: EmbeddingTable | None) -> _Encoded:
        return _encode_tokens(tokens, self.config.hash_buckets, self.check_embeddings(embeddings))

    def emissions(self, enc: _Encoded) -> np.ndarray:
        scores = np.add.reduceat(self.emission[enc.feat_idx], enc.token_ptr, axis=0) + self.bias
        if enc.dense is not None:
            scores = scores + enc.dense @ self.dense
        return scores

    def __repr__(self):
        return (
            f"TaggerModel(buckets={self.config.hash_buckets}, dense_dim={self.dense_dim}, "
            f"strategy={self.metadata.get('strategy')})"
        )


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


_B, _I, _O = 0, 1, 2


def viterbi(model: TaggerModel, enc: _Encoded) -> list[BioTag]:
    n = enc.n_tokens
    if n == 0:
        return []
    emissions = model.emissions(enc)
    # local[t, prev, cur]: log p(cur | prev, x_t); prev index 3 is the start state
    local = _log_softmax(emissions[:, None, :] + model.transitions[None, :, :])
    allowed = np.zeros((4, 3))
    allowed[_O, _I] = -np.inf
    allowed[START, _I] = -np.inf
    sep_mask = np.array([-np.inf, -np.inf, 0.0])

    delta = local[0, START] + allowed[START]
    if enc.separators[0]:
        delta = delta + sep_mask
    backpointers = np.zeros((n, 3), dtype=np.int64)
    for t in range(1, n):
        candidates = delta[:, None] + local[t, :3] + allowed[:3]
        backpointers[t] = np.argmax(candidates, axis=0)
        delta = candidates[backpointers[t], np.arange(3)]
        if enc.separators[t]:
            delta = delta + sep_mask
    best = [int(np.argmax(delta))]
    for t in range(n - 1, 0, -1):
        best.append(int(backpointers[t, best[-1]]))
    return [TAGS[i] for i in reversed(best)]


def decode(
    model: TaggerModel, rec: Record, embeddings: EmbeddingTable | None = None
) -> list[Mention]:
    tokens = tokenize(rec.text, model.separator_config)
    tags = viterbi(model, model.encode(tokens, embeddings))
    return mentions_from_tags(rec.id, tokens, tags)


def refine_with_matcher(
    mentions: Sequence[Mention],
    rec: Record,
    ont: Ontology,
    cfg: MatchConfig,
    mode: RefineMode,
) -> list[Mention]:
    """Keep only mentions whose text the matcher accepts (exact, or exact/approximate)."""
    approx = ApproxMatchProvider(ont, cfg) if mode is RefineMode.S1S2 else None
    kept = []
    for mention in mentions:
        text = mention.text(rec)
        if lookup_exact(ont, text) is not None or (approx is not None and approx.best(text)):
            kept.append(mention)
    return kept


# ---------------------------------------------------------------- training


class _Adagrad:
    def __init__(self, params: dict[str, np.ndarray], lr: float):
        self.params = params
        self.lr = lr
        self.reset()

    def reset(self):
        self.accumulators = {name: np.zeros_like(p) for name, p in self.params.items()}

    def step(self, name: str, grad: np.ndarray, rows: np.ndarray | None = None):
        acc = self.accumulators[name]
        param = self.params[name]
        if rows is None:
            acc += grad * grad
            param -= self.lr * grad / (np.sqrt(acc) + 1e-8)
        else:
            acc[rows] += grad * grad
            param[rows] -= self.lr * grad / (np.sqrt(acc[rows]) + 1e-8)


@dataclass
class _Example:
    enc: _Encoded
    targets: np.ndarray
    weights: np.ndarray
    prev: np.ndarray


def _make_example(
    seq: TaggedSequence,
    config: TaggerConfig,
    embeddings: EmbeddingTable | None,
) -> _Example:
    enc = _encode_tokens(seq.tokens, config.hash_buckets, embeddings)
    targets = np.zeros((len(seq.tags), 3))
    for k, (tag, weight) in enumerate(zip(seq.tags, seq.weights)):
        if config.label_smoothing:
            targets[k] = smooth_targets(tag, weight, config.epsilon_max)
        else:
            targets[k, TAG_INDEX[tag]] = 1.0
    prev = np.array([START] + [TAG_INDEX[t] for t in seq.tags], dtype=np.int64)[: len(seq.tags)]
    return _Example(enc, targets, np.asarray(seq.weights, dtype=np.float64), prev)


def drop_sequence_separators(
    seq: TaggedSequence, p: float, rng: np.random.Generator, sep_cfg: SeparatorConfig
) -> TaggedSequence | None:
    """Copy of ``seq`` with separators dropped; tags and weights follow their tokens."""
    dropped = drop_separators(Record(seq.record_id, seq.text), p, rng, sep_cfg)
    if not dropped.dropped:
        return None
    removed = {span.start for span in dropped.dropped}
    keep = [k for k, t in enumerate(seq.tokens) if t.span.start not in removed]
    new_tokens = tokenize(dropped.record.text, sep_cfg)
    if len(new_tokens) != len(keep):
        logger.debug("Skipping augmentation of '%s': token alignment changed", seq.record_id)
        return None
    tags = repair_tags([seq.tags[k] for k in keep])
    weights = [seq.weights[k] for k in keep]
    return TaggedSequence(seq.record_id, dropped.record.text, new_tokens, tags, weights)


def _run_epochs(
    model: TaggerModel,
    optimizer: _Adagrad,
    sequences: Sequence[TaggedSequence],
    epochs: int,
    augment_drop_p: float,
    rng: np.random.Generator,
    embeddings: EmbeddingTable | None,
    phase: str,
    progress_callback: Callable[[int, str], None] | None,
) -> list[float]:
    config = model.config
    base = [_make_example(seq, config, embeddings) for seq in sequences]
    augmentable = [seq for seq in sequences if seq.has_separator] if augment_drop_p > 0 else []
    losses = []
    for epoch in range(epochs):
        examples = list(base)
        for seq in augmentable:
            copy = drop_sequence_separators(seq, augment_drop_p, rng, model.separator_config)
            if copy is not None:
                examples.append(_make_example(copy, config, embeddings))
        order = rng.permutation(len(examples))
        total_loss, total_weight = 0.0, 0.0
        for batch_start in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[batch_start : batch_start + config.batch_size]]
            batch_loss, batch_weight = _train_batch(model, optimizer, batch)
            total_loss += batch_loss
            total_weight += batch_weight
        mean_loss = total_loss / total_weight if total_weight > 0 else 0.0
        losses.append(mean_loss)
        message = f"tagger {phase} epoch {epoch + 1}/{epochs}: loss {mean_loss:.4f}"
        logger.info(message)
        if progress_callback:
            progress_callback(int(100 * (epoch + 1) / max(1, epochs)), message)
    return losses


def _train_batch(model: TaggerModel, optimizer: _Adagrad, batch: list[_Example]) -> tuple[float, float]:
    feat_idx, token_ptr, owners, dense, prev, targets, weights = [], [], [], [], [], [], []
    offset_feats, offset_tokens = 0, 0
    for ex in batch:
        n = ex.enc.n_tokens
        if n == 0:
            continue
        feat_idx.append(ex.enc.feat_idx)
        token_ptr.append(ex.enc.token_ptr + offset_feats)
        counts = np.diff(np.append(ex.enc.token_ptr, len(ex.enc.feat_idx)))
        owners.append(np.repeat(np.arange(n) + offset_tokens, counts))
        if ex.enc.dense is not None:
            dense.append(ex.enc.dense)
        prev.append(ex.prev)
        targets.append(ex.targets)
        weights.append(ex.weights)
        offset_feats += len(ex.enc.feat_idx)
        offset_tokens += n
    if offset_tokens == 0:
        return 0.0, 0.0
    feat_idx = np.concatenate(feat_idx)
    token_ptr = np.concatenate(token_ptr)
    owners = np.concatenate(owners)
    prev = np.concatenate(prev)
    targets = np.concatenate(targets)
    weights = np.concatenate(weights)
    dense_x = np.concatenate(dense) if dense else None

    scores = np.add.reduceat(model.emission[feat_idx], token_ptr, axis=0) + model.bias
    if dense_x is not None:
        scores = scores + dense_x @ model.dense
    log_p = _log_softmax(scores + model.transitions[prev])
    loss = float(-np.sum(weights[:, None] * targets * log_p))
    grad = weights[:, None] * (np.exp(log_p) - targets)

    rows, inverse = np.unique(feat_idx, return_inverse=True)
    grad_rows = np.zeros((len(rows), 3))
    np.add.at(grad_rows, inverse, grad[owners])
    optimizer.step("emission", grad_rows, rows)
    optimizer.step("bias", grad.sum(axis=0))
    if dense_x is not None:
        optimizer.step("dense", dense_x.T @ grad)
    grad_transitions = np.zeros((4, 3))
    np.add.at(grad_transitions, prev, grad)
    optimizer.step("transitions", grad_transitions)
    return loss, float(weights.sum())


def train_tagger(
    data: Sequence[TaggedSequence],
    cfg: TaggerConfig,
    strategy: TrainingStrategy = TrainingStrategy.WEAK_ONLY,
    augment_drop_p: float = 0.0,
    seed: int = 42,
    gold: Sequence[TaggedSequence] | None = None,
    embeddings: EmbeddingTable | None = None,
    sep_cfg: SeparatorConfig | None = None,
    progress_callback: Callable[[int, str], None] | None = None,
) -> TaggerModel:
    """Train from ``data``; with FINE_TUNE, ``data`` is the weak set and ``gold`` the annotated one."""
    if not data:
        raise DataError("cannot train a tagger on an empty dataset")
    if strategy is TrainingStrategy.FINE_TUNE and not gold:
        raise DataError("fine-tuning needs a non-empty gold dataset")
    if not 0.0 <= augment_drop_p <= 1.0:
        raise ConfigError(f"augment_drop_p must be in [0, 1], got {augment_drop_p}")
    sep_cfg = sep_cfg or SeparatorConfig()
    if not cfg.use_embeddings:
        embeddings = None
    dense_dim = embeddings.dim if embeddings is not None else 0
    model = TaggerModel(cfg, sep_cfg, dense_dim)
    optimizer = _Adagrad(model.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(seed)

    losses = _run_epochs(
        model, optimizer, data, cfg.epochs, augment_drop_p, rng, embeddings, "train", progress_callback
    )
    if strategy is TrainingStrategy.FINE_TUNE:
        optimizer.reset()
        losses += _run_epochs(
            model,
            optimizer,
            gold,
            cfg.finetune_epochs,
            augment_drop_p,
            rng,
            embeddings,
            "fine-tune",
            progress_callback,
        )
    model.metadata = {
        "strategy": strategy.value,
        "seed": seed,
        "epochs": cfg.epochs,
        "augment_drop_p": augment_drop_p,
        "train_sequences": len(data),
        "gold_sequences": len(gold) if gold else 0,
        "loss_history": losses,
    }
    return model


# ---------------------------------------------------------------- persistence


def save_tagger(model: TaggerModel, path: str) -> None:
    rows = np.flatnonzero(np.any(model.emission != 0.0, axis=1))
    sep = model.separator_config
    header = {
        "template_hash": model.template_hash,
        "template_version": TEMPLATE_VERSION,
        "dense_dim": model.dense_dim,
        "config": asdict(model.config),
        "separators": {
            "separators": "".join(sep.separators),
            "slash_min_run": sep.slash_min_run,
            "period_digit_guard": sep.period_digit_guard,
        },
        "metadata": model.metadata,
    }
    write_model_container(
        path,
        MAGIC,
        FORMAT_VERSION,
        header,
        {
            "emission_rows": rows.astype(np.int64),
            "emission_values": model.emission[rows],
            "bias": model.bias,
            "dense": model.dense,
            "transitions": model.transitions,
        },
    )


def load_tagger(path: str) -> TaggerModel:
    header, arrays = read_model_container(path, MAGIC, FORMAT_VERSION)
    config = TaggerConfig(**header["config"])
    dense_dim = int(header["dense_dim"])
    expected = template_hash(config.hash_buckets, dense_dim)
    if header["template_hash"] != expected:
        raise FingerprintError(
            f"{path}: feature template hash {header['template_hash'][:12]} does not match "
            f"this build ({expected[:12]})"
        )
    emission = np.zeros((config.hash_buckets, 3))
    emission[arrays["emission_rows"]] = arrays["emission_values"]
    sep = header["separators"]
    sep_cfg = SeparatorConfig(
        tuple(sep["separators"]), sep["slash_min_run"], sep["period_digit_guard"]
    )
    return TaggerModel(
        config,
        sep_cfg,
        dense_dim,
        emission,
        arrays["bias"],
        arrays["dense"].reshape(dense_dim, 3),
        arrays["transitions"],
        header.get("metadata"),
    )
