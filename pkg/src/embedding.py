"""Subword-aware skip-gram embeddings trained on the record corpus.

A word's vector is the mean of its own row and the rows of its hashed
character n-grams; out-of-vocabulary words fall back to the n-gram rows that
were seen during training.
"""

import logging
from collections import Counter
from collections.abc import Callable, Sequence

import numpy as np

from errors import EmbeddingError
from textprep import Record, SeparatorConfig, tokenize
from utils.utils import fnv1a_32, read_model_container, write_model_container

logger = logging.getLogger(__name__)

MAGIC = b"CCEM"
FORMAT_VERSION = 1
DEFAULT_BUCKET = 1 << 20


def char_ngrams(word: str, min_n: int, max_n: int) -> list[str]:
    wrapped = f"<{word}>"
    grams = []
    for n in range(min_n, max_n + 1):
        for i in range(0, len(wrapped) - n + 1):
            grams.append(wrapped[i : i + n])
    return grams


class EmbeddingTable:
    def __init__(
        self,
        dim: int,
        vocab: Sequence[str],
        word_rows: np.ndarray,
        bucket_ids: np.ndarray,
        bucket_rows: np.ndarray,
        ngram_range: tuple[int, int] = (3, 5),
        bucket: int = DEFAULT_BUCKET,
        metadata: dict | None = None,
    ):
        if dim < 8:
            raise EmbeddingError(f"embedding dim must be >= 8, got {dim}")
        if word_rows.shape != (len(vocab), dim) or bucket_rows.shape != (len(bucket_ids), dim):
            raise EmbeddingError("embedding rows do not match the declared dimension")
        self.dim = dim
        self.vocab = list(vocab)
        self.word_index = {word: i for i, word in enumerate(self.vocab)}
        self.word_rows = word_rows.astype(np.float32, copy=False)
        self.bucket_ids = bucket_ids.astype(np.int64, copy=False)
        self.bucket_rows = bucket_rows.astype(np.float32, copy=False)
        self.bucket_index = {int(b): i for i, b in enumerate(self.bucket_ids)}
        self.ngram_range = ngram_range
        self.bucket = bucket
        self.metadata = metadata or {}
        self._cache: dict[str, np.ndarray] = {}

    @property
    def word_vectors(self) -> dict[str, np.ndarray]:
        return {word: self.word_vector(word) for word in self.vocab}

    @property
    def subword_vectors(self) -> dict[int, np.ndarray]:
        return {int(b): self.bucket_rows[i] for i, b in enumerate(self.bucket_ids)}

    def subword_buckets(self, word: str) -> list[int]:
        min_n, max_n = self.ngram_range
        return [fnv1a_32(g) % self.bucket for g in char_ngrams(word, min_n, max_n)]

    def word_vector(self, word: str) -> np.ndarray:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        rows = []
        if word in self.word_index:
            rows.append(self.word_rows[self.word_index[word]])
        for b in self.subword_buckets(word):
            i = self.bucket_index.get(b)
            if i is not None:
                rows.append(self.bucket_rows[i])
        if rows:
            vector = np.mean(np.stack(rows).astype(np.float64), axis=0)
        else:
            vector = np.zeros(self.dim, dtype=np.float64)
        self._cache[word] = vector
        return vector

    def __contains__(self, word: str) -> bool:
        return word in self.word_index

    def __repr__(self):
        return (
            f"EmbeddingTable(dim={self.dim}, vocab={len(self.vocab)}, "
            f"subwords={len(self.bucket_ids)}, ngram_range={self.ngram_range})"
        )


def embed_phrase(emb: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    """Mean of the covered token vectors; all-zero only when nothing is covered."""
    vectors = []
    for token in tokens:
        vector = emb.word_vector(token)
        if np.any(vector):
            vectors.append(vector)
    if not vectors:
        return np.zeros(emb.dim, dtype=np.float64)
    return np.mean(np.stack(vectors), axis=0)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise EmbeddingError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = float(np.sqrt(np.dot(u, u)))
    nv = float(np.sqrt(np.dot(v, v)))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def corpus_sentences(
    corpus: Sequence[Record], sep_cfg: SeparatorConfig | None = None
) -> list[list[str]]:
    return [[t.text for t in tokenize(rec.text, sep_cfg) if t.is_word] for rec in corpus]


def train_embeddings(
    corpus: Sequence[Record],
    dim: int = 100,
    epochs: int = 5,
    window: int = 3,
    seed: int = 42,
    negatives: int = 5,
    ngram_range: tuple[int, int] = (3, 5),
    bucket: int = DEFAULT_BUCKET,
    learning_rate: float = 0.05,
    batch_size: int = 256,
    sep_cfg: SeparatorConfig | None = None,
    progress_callback: Callable[[int, str], None] | None = None,
) -> EmbeddingTable:
    if dim < 8:
        raise EmbeddingError(f"embedding dim must be >= 8, got {dim}")
    if epochs < 1 or window < 1:
        raise EmbeddingError("epochs and window must be >= 1")
    min_n, max_n = ngram_range
    if not 1 <= min_n <= max_n:
        raise EmbeddingError(f"invalid n-gram range {ngram_range}")

    def _report_progress(percent: int, message: str):
        logger.debug(message)
        if progress_callback:
            progress_callback(percent, message)

    sentences = corpus_sentences(corpus, sep_cfg)
    counts = Counter(word for sentence in sentences for word in sentence)
    if len(counts) < 2:
        raise EmbeddingError(
            f"corpus has {len(counts)} distinct token(s); at least 2 are required"
        )
    vocab = sorted(counts)
    word_index = {word: i for i, word in enumerate(vocab)}
    V = len(vocab)

    word_buckets = [
        sorted({fnv1a_32(g) % bucket for g in char_ngrams(w, min_n, max_n)}) for w in vocab
    ]
    bucket_ids = np.array(sorted({b for bs in word_buckets for b in bs}), dtype=np.int64)
    bucket_pos = {int(b): i for i, b in enumerate(bucket_ids)}
    U = len(bucket_ids)

    # row V+U is a padding row that always stays zero
    max_rows = 1 + max(len(bs) for bs in word_buckets)
    row_index = np.full((V, max_rows), V + U, dtype=np.int64)
    row_count = np.zeros(V, dtype=np.float32)
    for i, bs in enumerate(word_buckets):
        rows = [i] + [V + bucket_pos[b] for b in bs]
        row_index[i, : len(rows)] = rows
        row_count[i] = len(rows)

    rng = np.random.default_rng(seed)
    input_matrix = np.zeros((V + U + 1, dim), dtype=np.float32)
    input_matrix[: V + U] = rng.uniform(-1.0 / dim, 1.0 / dim, size=(V + U, dim)).astype(
        np.float32
    )
    output_matrix = np.zeros((V, dim), dtype=np.float32)

    freq = np.array([counts[w] for w in vocab], dtype=np.float64) ** 0.75
    noise_dist = freq / freq.sum()

    centers, contexts = [], []
    for sentence in sentences:
        ids = [word_index[w] for w in sentence]
        for pos, center in enumerate(ids):
            lo, hi = max(0, pos - window), min(len(ids), pos + window + 1)
            for ctx_pos in range(lo, hi):
                if ctx_pos != pos:
                    centers.append(center)
                    contexts.append(ids[ctx_pos])
    centers = np.array(centers, dtype=np.int64)
    contexts = np.array(contexts, dtype=np.int64)
    n_pairs = len(centers)
    if n_pairs == 0:
        raise EmbeddingError("corpus has no co-occurring token pairs to train on")

    labels = np.zeros(1 + negatives, dtype=np.float32)
    labels[0] = 1.0
    total_steps = epochs * n_pairs
    loss_history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n_pairs)
        epoch_loss = 0.0
        for batch_start in range(0, n_pairs, batch_size):
            batch = order[batch_start : batch_start + batch_size]
            lr = learning_rate * max(1e-4, 1.0 - step / total_steps)
            step += len(batch)
            c = centers[batch]
            rows = row_index[c]
            mask = (rows < V + U).astype(np.float32)
            inv_count = (1.0 / row_count[c]).astype(np.float32)
            h = input_matrix[rows].sum(axis=1) * inv_count[:, None]

            negs = rng.choice(V, size=(len(batch), negatives), p=noise_dist)
            targets = np.concatenate([contexts[batch][:, None], negs], axis=1)
            out = output_matrix[targets]
            score = np.einsum("bkd,bd->bk", out, h)
            sig = 1.0 / (1.0 + np.exp(-np.clip(score, -30.0, 30.0)))
            epoch_loss -= float(
                np.sum(np.log(np.where(labels[None, :] > 0, sig, 1.0 - sig) + 1e-7))
            )
            g = (labels[None, :] - sig) * lr
            grad_h = np.einsum("bk,bkd->bd", g, out)
            np.add.at(output_matrix, targets, g[:, :, None] * h[:, None, :])
            row_grad = (grad_h * inv_count[:, None])[:, None, :] * mask[:, :, None]
            np.add.at(input_matrix, rows, row_grad)
            input_matrix[V + U] = 0.0
        mean_loss = epoch_loss / n_pairs
        loss_history.append(mean_loss)
        _report_progress(
            int(100 * (epoch + 1) / epochs),
            f"embedding epoch {epoch + 1}/{epochs}: loss {mean_loss:.4f}",
        )
    logger.info(
        "Trained embeddings: %d words, %d subword buckets, final loss %.4f",
        V,
        U,
        loss_history[-1],
    )
    metadata = {
        "epochs": epochs,
        "window": window,
        "negatives": negatives,
        "seed": seed,
        "learning_rate": learning_rate,
        "loss_history": loss_history,
    }
    return EmbeddingTable(
        dim,
        vocab,
        input_matrix[:V].copy(),
        bucket_ids,
        input_matrix[V : V + U].copy(),
        (min_n, max_n),
        bucket,
        metadata,
    )


def save_embeddings(emb: EmbeddingTable, path: str) -> None:
    header = {
        "dim": emb.dim,
        "vocab_size": len(emb.vocab),
        "bucket": emb.bucket,
        "ngram_range": list(emb.ngram_range),
        "vocab": emb.vocab,
        "metadata": emb.metadata,
    }
    write_model_container(
        path,
        MAGIC,
        FORMAT_VERSION,
        header,
        {
            "word_rows": emb.word_rows,
            "bucket_ids": emb.bucket_ids,
            "bucket_rows": emb.bucket_rows,
        },
    )


def load_embeddings(path: str) -> EmbeddingTable:
    header, arrays = read_model_container(path, MAGIC, FORMAT_VERSION)
    if header["vocab_size"] != len(header["vocab"]):
        raise EmbeddingError("vocabulary size does not match header", path=path)
    return EmbeddingTable(
        header["dim"],
        header["vocab"],
        arrays["word_rows"],
        arrays["bucket_ids"],
        arrays["bucket_rows"],
        tuple(header["ngram_range"]),
        header["bucket"],
        header.get("metadata"),
    )


def export_text(emb: EmbeddingTable, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"{len(emb.vocab)} {emb.dim}\n")
        for word in emb.vocab:
            values = " ".join(f"{x:.6f}" for x in emb.word_vector(word))
            handle.write(f"{word} {values}\n")
