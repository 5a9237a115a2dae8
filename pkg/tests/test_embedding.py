import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from embedding import (
    char_ngrams,
    cosine,
    embed_phrase,
    export_text,
    load_embeddings,
    save_embeddings,
    train_embeddings,
)
from errors import EmbeddingError, FingerprintError
from textprep import Record
from utils.utils import write_model_container

int_vectors = st.lists(st.integers(min_value=-50, max_value=50), min_size=4, max_size=4)


def _uncovered_word(emb):
    for word in ("qqqqqq", "zzzzzz", "xqxqxq", "jjjjjj", "wkwkwk"):
        if word not in emb and not any(b in emb.bucket_index for b in emb.subword_buckets(word)):
            return word
    pytest.skip("every candidate word collides with a trained subword bucket")


def test_char_ngrams_wrap_the_word():
    assert char_ngrams("ab", 3, 3) == ["<ab", "ab>"]
    assert char_ngrams("a", 2, 3) == ["<a", "a>", "<a>"]


@given(int_vectors)
def test_cosine_with_itself_is_one(values):
    v = np.array(values, dtype=np.float64)
    assume(np.any(v))
    assert cosine(v, v) == pytest.approx(1.0, abs=1e-12)


@given(int_vectors, int_vectors)
def test_cosine_is_symmetric_and_bounded(a, b):
    u, v = np.array(a, dtype=np.float64), np.array(b, dtype=np.float64)
    assert cosine(u, v) == pytest.approx(cosine(v, u))
    assert -1.0 <= cosine(u, v) <= 1.0


def test_cosine_zero_vector_and_dimension_mismatch():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0
    with pytest.raises(EmbeddingError):
        cosine(np.ones(3), np.ones(4))


def test_training_is_deterministic(small_corpus):
    a = train_embeddings(small_corpus, dim=12, epochs=2, seed=3, bucket=1 << 10)
    b = train_embeddings(small_corpus, dim=12, epochs=2, seed=3, bucket=1 << 10)
    assert a.vocab == b.vocab
    assert np.array_equal(a.word_rows, b.word_rows)
    assert np.array_equal(a.bucket_rows, b.bucket_rows)
    assert a.metadata["loss_history"] == b.metadata["loss_history"]


def test_vocabulary_and_subword_fallback(tiny_embeddings):
    assert "fever" in tiny_embeddings
    assert "pyrexia" not in tiny_embeddings
    # shares character n-grams with "fever" and "fevers"
    assert np.any(tiny_embeddings.word_vector("feverr"))
    assert not np.any(tiny_embeddings.word_vector(_uncovered_word(tiny_embeddings)))
    assert len(tiny_embeddings.word_vectors) == len(tiny_embeddings.vocab)
    assert all(len(v) == 16 for v in tiny_embeddings.subword_vectors.values())


def test_embed_phrase_ignores_uncovered_tokens(tiny_embeddings):
    unknown = _uncovered_word(tiny_embeddings)
    alone = embed_phrase(tiny_embeddings, ["fever"])
    padded = embed_phrase(tiny_embeddings, ["fever", unknown])
    assert np.allclose(alone, padded)
    assert not np.any(embed_phrase(tiny_embeddings, [unknown]))


def test_degenerate_corpus_is_rejected():
    with pytest.raises(EmbeddingError):
        train_embeddings([Record("a", "fever fever")], dim=8)
    with pytest.raises(EmbeddingError):
        train_embeddings([Record("a", "fever, cough")], dim=4)


def test_save_load_round_trip(tmp_path, tiny_embeddings):
    path = tmp_path / "emb.bin"
    save_embeddings(tiny_embeddings, str(path))
    loaded = load_embeddings(str(path))
    assert loaded.vocab == tiny_embeddings.vocab
    assert loaded.ngram_range == tiny_embeddings.ngram_range
    for word in ("fever", "feverr", "chest"):
        assert np.array_equal(loaded.word_vector(word), tiny_embeddings.word_vector(word))


def test_load_rejects_other_model_files(tmp_path):
    path = tmp_path / "other.bin"
    write_model_container(str(path), b"XXXX", 1, {}, {"a": np.zeros(2)})
    with pytest.raises(FingerprintError):
        load_embeddings(str(path))


def test_text_export(tmp_path, tiny_embeddings):
    path = tmp_path / "emb.txt"
    export_text(tiny_embeddings, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"{len(tiny_embeddings.vocab)} 16"
    assert len(lines) == len(tiny_embeddings.vocab) + 1
    assert len(lines[1].split()) == 17


def test_cosine_of_a_diagonal():
    assert cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1 / np.sqrt(2))


def _shared_context_corpus(copies=10):
    texts = []
    for left in ("severe", "frontal", "throbbing", "mild", "acute"):
        for right in ("since", "today", "worsening", "constant"):
            texts.append(f"{left} headache {right}")
            texts.append(f"{left} ha {right}")
    for side in ("left", "right"):
        for joint in ("knee", "ankle", "wrist"):
            for finding in ("swelling", "bruise"):
                texts.append(f"{side} {joint} {finding} after fall")
    return [Record(f"r{n}", text) for n, text in enumerate(texts * copies)]


@pytest.fixture(scope="module")
def context_embeddings():
    return train_embeddings(
        _shared_context_corpus(), dim=16, epochs=20, window=2, seed=5, bucket=1 << 12
    )


@pytest.mark.slow
def test_words_in_the_same_contexts_end_up_close(context_embeddings):
    ha = context_embeddings.word_vector("ha")
    assert cosine(ha, context_embeddings.word_vector("headache")) > cosine(
        ha, context_embeddings.word_vector("knee")
    )


@pytest.mark.slow
def test_training_loss_goes_down(context_embeddings):
    losses = context_embeddings.metadata["loss_history"]
    assert len(losses) == 20
    for previous, current in zip(losses, losses[1:]):
        assert current <= previous + 0.1
    assert losses[-1] < 0.8 * losses[0]
