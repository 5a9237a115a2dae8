"""Mention-to-concept classifier with directional context features.

Each mention is described by four feature groups (mention words, mention
character n-grams, left context, right context). Every group is pooled as the
mean of its learned feature rows; the pooled vectors are concatenated with the
mention's phrase embedding and fed to a softmax over all ontology concepts.
"""

import logging
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from annotations import AnnotatedRecord, WeakAnnotation
from embedding import EmbeddingTable, embed_phrase
from errors import AnnotationError, ConfigError, DataError, FingerprintError
from ontology import Ontology, lookup_exact
from tagger import Mention
from textprep import CharSpan, Record, SeparatorConfig, Token, tokenize
from utils.utils import read_jsonl, read_model_container, write_jsonl, write_model_container

logger = logging.getLogger(__name__)

MAGIC = b"CCLK"
FORMAT_VERSION = 1
GROUPS = ("mention", "chars", "left", "right")


class LinkSource(str, Enum):
    EXACT_MATCH = "ExactMatch"
    MODEL = "Model"


class LinkMode(str, Enum):
    EXACT = "exact"
    MODEL = "model"
    ENSEMBLE = "ensemble"


@dataclass(frozen=True)
class LinkerConfig:
    window: int = 2
    epochs: int = 10
    learning_rate: float = 0.1
    hidden_dim: int = 50
    batch_size: int = 32
    use_char_features: bool = True
    use_embeddings: bool = True

    def __post_init__(self):
        if self.window < 0:
            raise ConfigError(f"linker window must be >= 0, got {self.window}")
        if self.epochs < 0 or self.batch_size < 1 or self.hidden_dim < 1:
            raise ConfigError("linker epochs must be >= 0, batch_size and hidden_dim >= 1")


@dataclass(frozen=True)
class FeatureBundle:
    mention: tuple[str, ...]
    chars: tuple[str, ...]
    left: tuple[str, ...]
    right: tuple[str, ...]
    phrase: tuple[str, ...]

    def group(self, name: str) -> tuple[str, ...]:
        return getattr(self, name)


@dataclass(frozen=True)
class LinkedEntity:
    mention: Mention
    concept_id: str
    score: float
    source: LinkSource

    def to_json(self) -> dict:
        return {
            "record_id": self.mention.record_id,
            "start": self.mention.span.start,
            "end": self.mention.span.end,
            "concept": self.concept_id,
            "score": self.score,
            "source": self.source.value,
        }


def mention_from_span(
    rec: Record, span: CharSpan, sep_cfg: SeparatorConfig | None = None
) -> Mention:
    tokens = tokenize(rec.text, sep_cfg)
    inside = [i for i, t in enumerate(tokens) if span.contains(t.span)]
    if span.end > len(rec.text) or not inside:
        raise AnnotationError(
            f"record '{rec.id}': span ({span.start}, {span.end}) covers no token"
        )
    return Mention(rec.id, span, (inside[0], inside[-1]))


def _char_ngrams(words: Sequence[str], sizes: Iterable[int] = (2, 3, 4)) -> list[str]:
    grams = []
    for word in words:
        wrapped = f"<{word}>"
        for n in sizes:
            grams.extend(wrapped[i : i + n] for i in range(len(wrapped) - n + 1))
    return grams


def _context(tokens: Sequence[Token], indices: Iterable[int], window: int) -> list[int]:
    picked = []
    for i in indices:
        if len(picked) == window or not 0 <= i < len(tokens) or tokens[i].is_separator:
            break
        picked.append(i)
    return picked


def featurize_mention(
    rec: Record,
    m: Mention,
    window: int = 2,
    sep_cfg: SeparatorConfig | None = None,
    use_char_features: bool = True,
) -> FeatureBundle:
    """Feature groups for one mention; context stops at the record edge or an active separator."""
    if window < 0:
        raise ConfigError(f"window must be >= 0, got {window}")
    if m.span.end > len(rec.text):
        raise AnnotationError(
            f"record '{rec.id}': mention ({m.span.start}, {m.span.end}) outside record"
        )
    tokens = tokenize(rec.text, sep_cfg)
    first, last = m.token_range
    if not 0 <= first <= last < len(tokens):
        raise AnnotationError(f"record '{rec.id}': mention token range {m.token_range} outside record")
    words = [t.text for t in tokens[first : last + 1] if not t.is_separator]
    left = _context(tokens, range(first - 1, -1, -1), window)
    right = _context(tokens, range(last + 1, len(tokens)), window)
    return FeatureBundle(
        mention=tuple(f"w={w}" for w in words),
        chars=tuple(_char_ngrams(words)) if use_char_features else (),
        left=tuple(f"{tokens[i].text}@{i - first}" for i in left),
        right=tuple(f"{tokens[i].text}@+{i - last}" for i in right),
        phrase=tuple(w for w in words if w.isalnum()),
    )


class LinkerModel:
    def __init__(
        self,
        classes: Sequence[str],
        features: Sequence[str],
        config: LinkerConfig,
        ontology_fingerprint: str,
        separator_config: SeparatorConfig,
        dense_dim: int = 0,
        rows: np.ndarray | None = None,
        weights: np.ndarray | None = None,
        bias: np.ndarray | None = None,
        metadata: dict | None = None,
    ):
        self.classes = list(classes)
        self.features = list(features)
        self.feature_index = {f: i for i, f in enumerate(self.features)}
        self.config = config
        self.ontology_fingerprint = ontology_fingerprint
        self.separator_config = separator_config
        self.dense_dim = dense_dim
        hidden = config.hidden_dim
        self.rows = rows if rows is not None else np.zeros((len(self.features), hidden))
        input_dim = len(GROUPS) * hidden + dense_dim
        self.weights = weights if weights is not None else np.zeros((input_dim, len(self.classes)))
        self.bias = bias if bias is not None else np.zeros(len(self.classes))
        self.metadata = metadata or {}

    def parameters(self) -> dict[str, np.ndarray]:
        return {"rows": self.rows, "weights": self.weights, "bias": self.bias}

    def featurize(self, rec: Record, m: Mention) -> FeatureBundle:
        return featurize_mention(
            rec, m, self.config.window, self.separator_config, self.config.use_char_features
        )

    def check_embeddings(self, embeddings: EmbeddingTable | None) -> EmbeddingTable | None:
        if self.dense_dim == 0:
            return None
        if embeddings is None:
            raise ConfigError("this linker uses phrase embeddings; an embedding table is required")
        if embeddings.dim != self.dense_dim:
            raise FingerprintError(
                f"linker expects {self.dense_dim}-dim embeddings, got {embeddings.dim}"
            )
        return embeddings

    def group_rows(self, bundle: FeatureBundle) -> list[np.ndarray]:
        return [
            np.array(
                [self.feature_index[f] for f in bundle.group(g) if f in self.feature_index],
                dtype=np.int64,
            )
            for g in GROUPS
        ]

    def hidden(
        self, bundle: FeatureBundle, embeddings: EmbeddingTable | None
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        group_rows = self.group_rows(bundle)
        parts = [
            self.rows[idx].mean(axis=0) if len(idx) else np.zeros(self.config.hidden_dim)
            for idx in group_rows
        ]
        if self.dense_dim:
            parts.append(embed_phrase(embeddings, bundle.phrase))
        return np.concatenate(parts), group_rows

    def distribution(
        self, rec: Record, m: Mention, embeddings: EmbeddingTable | None = None
    ) -> np.ndarray:
        embeddings = self.check_embeddings(embeddings)
        h, _ = self.hidden(self.featurize(rec, m), embeddings)
        return _softmax(h @ self.weights + self.bias)

    def __repr__(self):
        return (
            f"LinkerModel(classes={len(self.classes)}, features={len(self.features)}, "
            f"window={self.config.window}, dense_dim={self.dense_dim})"
        )


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


def _check_concepts(data: Sequence[tuple[Record, WeakAnnotation]], ont: Ontology) -> None:
    for rec, ann in data:
        if ann.concept_id is None or ann.concept_id not in ont:
            raise AnnotationError(
                f"record '{rec.id}': annotation concept '{ann.concept_id}' is not in the ontology"
            )


def train_linker(
    data: Sequence[tuple[Record, WeakAnnotation]],
    ont: Ontology,
    cfg: LinkerConfig,
    seed: int = 42,
    weights: Sequence[float] | None = None,
    embeddings: EmbeddingTable | None = None,
    sep_cfg: SeparatorConfig | None = None,
    progress_callback: Callable[[int, str], None] | None = None,
) -> LinkerModel:
    """Fit the classifier; each example is weighted by its annotation confidence.

    ``weights`` overrides the per-example weights when given.
    """
    if not data:
        raise DataError("cannot train a linker on an empty dataset")
    _check_concepts(data, ont)
    if weights is None:
        weights = [ann.confidence for _, ann in data]
    if len(weights) != len(data):
        raise ConfigError("weights must have one entry per training example")
    example_weights = np.asarray(weights, dtype=np.float64)
    if np.any(example_weights < 0):
        raise ConfigError("example weights must be non-negative")
    sep_cfg = sep_cfg or SeparatorConfig()
    if not cfg.use_embeddings:
        embeddings = None

    mentions = [mention_from_span(rec, ann.span, sep_cfg) for rec, ann in data]
    bundles = [
        featurize_mention(rec, m, cfg.window, sep_cfg, cfg.use_char_features)
        for (rec, _), m in zip(data, mentions)
    ]
    features = sorted({f for b in bundles for g in GROUPS for f in b.group(g)})
    classes = ont.concept_ids()
    class_index = {c: i for i, c in enumerate(classes)}
    labels = np.array([class_index[ann.concept_id] for _, ann in data], dtype=np.int64)

    rng = np.random.default_rng(seed)
    dense_dim = embeddings.dim if embeddings is not None else 0
    scale = 1.0 / np.sqrt(cfg.hidden_dim)
    model = LinkerModel(
        classes,
        features,
        cfg,
        ont.fingerprint(),
        sep_cfg,
        dense_dim,
        rows=rng.uniform(-scale, scale, size=(len(features), cfg.hidden_dim)),
    )
    hidden_cache = [model.group_rows(b) for b in bundles]
    phrase_cache = (
        [embed_phrase(embeddings, b.phrase) for b in bundles] if dense_dim else None
    )

    params = model.parameters()
    accumulators = {name: np.zeros_like(p) for name, p in params.items()}

    def adagrad(name: str, grad: np.ndarray, rows: np.ndarray | None = None):
        acc, param = accumulators[name], params[name]
        if rows is None:
            acc += grad * grad
            param -= cfg.learning_rate * grad / (np.sqrt(acc) + 1e-8)
        else:
            acc[rows] += grad * grad
            param[rows] -= cfg.learning_rate * grad / (np.sqrt(acc[rows]) + 1e-8)

    hidden = cfg.hidden_dim
    total_weight = float(example_weights.sum())
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0
        for batch_start in range(0, len(order), cfg.batch_size):
            batch = order[batch_start : batch_start + cfg.batch_size]
            h = np.zeros((len(batch), model.weights.shape[0]))
            for k, i in enumerate(batch):
                for g, idx in enumerate(hidden_cache[i]):
                    if len(idx):
                        h[k, g * hidden : (g + 1) * hidden] = model.rows[idx].mean(axis=0)
                if phrase_cache is not None:
                    h[k, len(GROUPS) * hidden :] = phrase_cache[i]
            probs = _softmax(h @ model.weights + model.bias)
            w = example_weights[batch]
            y = labels[batch]
            epoch_loss -= float(np.sum(w * np.log(probs[np.arange(len(batch)), y] + 1e-12)))
            grad_logits = probs
            grad_logits[np.arange(len(batch)), y] -= 1.0
            grad_logits *= w[:, None]
            grad_h = grad_logits @ model.weights.T

            row_grads: dict[int, np.ndarray] = {}
            for k, i in enumerate(batch):
                for g, idx in enumerate(hidden_cache[i]):
                    if not len(idx):
                        continue
                    share = grad_h[k, g * hidden : (g + 1) * hidden] / len(idx)
                    for r in idx:
                        r = int(r)
                        if r in row_grads:
                            row_grads[r] = row_grads[r] + share
                        else:
                            row_grads[r] = share.copy()
            adagrad("weights", h.T @ grad_logits)
            adagrad("bias", grad_logits.sum(axis=0))
            if row_grads:
                touched = np.array(sorted(row_grads), dtype=np.int64)
                adagrad("rows", np.stack([row_grads[int(r)] for r in touched]), touched)
        mean_loss = epoch_loss / total_weight if total_weight > 0 else 0.0
        losses.append(mean_loss)
        message = f"linker epoch {epoch + 1}/{cfg.epochs}: loss {mean_loss:.4f}"
        logger.info(message)
        if progress_callback:
            progress_callback(int(100 * (epoch + 1) / max(1, cfg.epochs)), message)

    model.metadata = {
        "seed": seed,
        "epochs": cfg.epochs,
        "examples": len(data),
        "loss_history": losses,
    }
    return model


def link(
    model: LinkerModel, rec: Record, m: Mention, embeddings: EmbeddingTable | None = None
) -> LinkedEntity:
    probs = model.distribution(rec, m, embeddings)
    # argmax returns the first maximum; classes are sorted, so ties go to the smaller id
    best = int(np.argmax(probs))
    return LinkedEntity(m, model.classes[best], float(probs[best]), LinkSource.MODEL)


def link_exact(ont: Ontology, rec: Record, m: Mention) -> LinkedEntity | None:
    concept_id = lookup_exact(ont, m.text(rec))
    if concept_id is None:
        return None
    return LinkedEntity(m, concept_id, 1.0, LinkSource.EXACT_MATCH)


def link_ensemble(
    ont: Ontology,
    model: LinkerModel,
    rec: Record,
    m: Mention,
    embeddings: EmbeddingTable | None = None,
) -> LinkedEntity:
    return link_exact(ont, rec, m) or link(model, rec, m, embeddings)


def link_mentions(
    mentions: Iterable[Mention],
    rec: Record,
    mode: LinkMode,
    ont: Ontology,
    model: LinkerModel | None = None,
    embeddings: EmbeddingTable | None = None,
) -> list[LinkedEntity]:
    """Link every mention of one record; exact mode drops mentions without a synonym hit."""
    if mode is not LinkMode.EXACT and model is None:
        raise ConfigError(f"link mode '{mode.value}' needs a trained linker model")
    linked = []
    for m in mentions:
        if mode is LinkMode.EXACT:
            entity = link_exact(ont, rec, m)
        elif mode is LinkMode.MODEL:
            entity = link(model, rec, m, embeddings)
        else:
            entity = link_ensemble(ont, model, rec, m, embeddings)
        if entity is not None:
            linked.append(entity)
    return linked


def write_linked(path: str, entities: Iterable[LinkedEntity]) -> int:
    return write_jsonl(path, (e.to_json() for e in entities))


def read_linked(
    path: str, records: dict[str, Record], sep_cfg: SeparatorConfig | None = None
) -> list[LinkedEntity]:
    entities = []
    for line_no, obj in read_jsonl(path):
        try:
            span = CharSpan(int(obj["start"]), int(obj["end"]))
            record_id = str(obj["record_id"])
            source = LinkSource(obj.get("source", LinkSource.MODEL.value))
            concept_id = str(obj["concept"])
            score = float(obj.get("score", 1.0))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"bad linked entity ({e})", path=path, line=line_no)
        if record_id not in records:
            raise DataError(f"linked entity for unknown record '{record_id}'", path=path, line=line_no)
        try:
            mention = mention_from_span(records[record_id], span, sep_cfg)
        except AnnotationError as e:
            raise DataError(e.detail, path=path, line=line_no)
        entities.append(LinkedEntity(mention, concept_id, score, source))
    return entities


def linked_to_annotated(
    records: Sequence[Record], entities: Iterable[LinkedEntity]
) -> list[AnnotatedRecord]:
    """Per-record annotation view of linked output, for the evaluator."""
    by_record: dict[str, list[WeakAnnotation]] = {r.id: [] for r in records}
    for e in entities:
        if e.mention.record_id not in by_record:
            raise DataError(f"linked entity for unknown record '{e.mention.record_id}'")
        confidence = min(1.0, max(e.score, 1e-12))
        by_record[e.mention.record_id].append(
            WeakAnnotation(e.mention.record_id, e.mention.span, e.concept_id, confidence)
        )
    return [
        AnnotatedRecord(r.id, r.text, sorted(by_record[r.id], key=lambda a: a.span))
        for r in records
    ]


def save_linker(model: LinkerModel, path: str) -> None:
    sep = model.separator_config
    header = {
        "ontology_fingerprint": model.ontology_fingerprint,
        "classes": model.classes,
        "features": model.features,
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
        {"rows": model.rows, "weights": model.weights, "bias": model.bias},
    )


def load_linker(path: str, ont: Ontology | None = None) -> LinkerModel:
    """Load a linker; with ``ont`` given, its fingerprint must match the training ontology."""
    header, arrays = read_model_container(path, MAGIC, FORMAT_VERSION)
    if ont is not None and header["ontology_fingerprint"] != ont.fingerprint():
        raise FingerprintError(
            f"{path}: linker was trained on ontology {header['ontology_fingerprint'][:12]}, "
            f"current ontology is {ont.fingerprint()[:12]}"
        )
    config = LinkerConfig(**header["config"])
    sep = header["separators"]
    return LinkerModel(
        header["classes"],
        header["features"],
        config,
        header["ontology_fingerprint"],
        SeparatorConfig(tuple(sep["separators"]), sep["slash_min_run"], sep["period_digit_guard"]),
        int(header["dense_dim"]),
        arrays["rows"].reshape(len(header["features"]), config.hidden_dim),
        arrays["weights"],
        arrays["bias"],
        header.get("metadata"),
    )
