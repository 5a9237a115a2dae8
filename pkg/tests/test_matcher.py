import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from annotations import MatchStage
from errors import ConfigError
from matcher import (
    MatchConfig,
    generate_weak_labels,
    match_approx,
    match_embedding,
    match_exact,
    ngram_jaccard,
)
from ontology import Ontology, make_concept
from services.match_providers import NgramIndex
from synthcorpus import corrupt_string, generate_ontology
from textprep import CharSpan, Record, split_chunks


def _chunk(text):
    chunks = split_chunks(Record("r", text))
    assert len(chunks) == 1
    return chunks[0]


def _rows(dataset):
    return [r.to_json() for r in dataset.records]


def test_ngram_jaccard():
    assert ngram_jaccard("chest pain", "chest pain", 3) == 1.0
    assert ngram_jaccard("chest painn", "chest pain", 3) == pytest.approx(8 / 9)
    assert ngram_jaccard("ha", "ha", 3) == 1.0
    assert ngram_jaccard("ha", "hb", 3) == 0.0
    assert ngram_jaccard("abcd", "abce", 3) == pytest.approx(1 / 3)


def test_match_config_validation():
    with pytest.raises(ConfigError):
        MatchConfig(tau_approx=0.0)
    with pytest.raises(ConfigError):
        MatchConfig(tau_emb=1.5)
    with pytest.raises(ConfigError):
        MatchConfig(ngram_size=1)


def test_exact_match(small_ontology):
    annotation = match_exact(_chunk("fevers"), small_ontology, "r1")
    assert annotation.concept_id == "C002"
    assert annotation.confidence == 1.0
    assert annotation.stage is MatchStage.S1
    assert match_exact(_chunk("chest painn"), small_ontology) is None


def test_approx_match_reports_jaccard_confidence(small_ontology):
    annotation = match_approx(_chunk("chest painn"), small_ontology, MatchConfig(tau_approx=0.7))
    assert annotation.concept_id == "C001"
    assert annotation.confidence == pytest.approx(8 / 9)
    assert annotation.stage is MatchStage.S2
    assert match_approx(_chunk("chest pian"), small_ontology, MatchConfig()) is None


def test_approx_ties_go_to_the_smaller_concept_id():
    ont = Ontology([make_concept("K2", "feverx"), make_concept("K1", "feverz")])
    annotation = match_approx(_chunk("feverq"), ont, MatchConfig(tau_approx=0.5))
    assert annotation.concept_id == "K1"
    assert annotation.confidence == pytest.approx(0.6)


def test_approx_prefers_an_identical_synonym():
    # both synonyms share the n-gram set {aba, bab}
    ont = Ontology([make_concept("K1", "ababab"), make_concept("K2", "abab")])
    annotation = match_approx(_chunk("abab"), ont, MatchConfig())
    assert annotation.concept_id == "K2"
    assert annotation.confidence == 1.0
    assert match_approx(_chunk("ababab"), ont, MatchConfig()).concept_id == "K1"


def test_approx_agrees_with_exact_matches(small_ontology, small_corpus):
    exact = generate_weak_labels(small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S1])
    approx = generate_weak_labels(small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S2])
    for a, b in zip(exact.records, approx.records):
        by_span = {ann.span: ann for ann in b.annotations}
        for ann in a.annotations:
            assert by_span[ann.span].concept_id == ann.concept_id
            assert by_span[ann.span].confidence == 1.0


INDEX_ONTOLOGY, _ = generate_ontology(40, synonyms_per=3, seed=21, n_children=8)
INDEX_SYNONYMS = INDEX_ONTOLOGY.synonym_pairs()


def _scan_best(text, threshold, n=3):
    for synonym, concept_id in INDEX_SYNONYMS:
        if synonym == text:
            return 1.0, concept_id
    scored = [
        (ngram_jaccard(text, synonym, n), synonym, concept_id) for synonym, concept_id in INDEX_SYNONYMS
    ]
    scored = [s for s in scored if s[0] >= threshold]
    if not scored:
        return None
    score, _, concept_id = min(scored, key=lambda s: (-s[0], -len(s[1]), s[2]))
    return score, concept_id


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, len(INDEX_SYNONYMS) - 1),
    st.sampled_from([0.0, 0.1, 0.25]),
    st.integers(0, 2**16),
    st.floats(0.3, 1.0),
)
def test_ngram_index_matches_a_full_scan(entry, typo_rate, seed, threshold):
    text = corrupt_string(INDEX_SYNONYMS[entry][0], typo_rate, np.random.default_rng(seed))
    found = NgramIndex(INDEX_ONTOLOGY, 3).best_match(text, threshold)
    expected = _scan_best(text, threshold)
    if expected is None:
        assert found is None
    else:
        assert (found[0], found[2]) == expected


def test_exact_stage_labels_and_unmatched_spans(small_ontology, small_corpus):
    dataset = generate_weak_labels(small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S1])
    first = dataset.records[0]
    assert [(a.span, a.concept_id) for a in first.annotations] == [
        (CharSpan(0, 10), "C001"),
        (CharSpan(11, 16), "C002"),
    ]
    assert dataset.records[1].unmatched_spans == [CharSpan(7, 12)]
    assert [r.record_id for r in dataset.records] == [r.id for r in small_corpus]
    assert dataset.stats["chunks"] == dataset.annotation_count() + dataset.stats["unmatched_chunks"]


def test_later_stages_only_add_annotations(small_ontology, small_corpus, tiny_embeddings):
    cfg = MatchConfig(tau_approx=0.6, tau_emb=0.6)
    s1 = generate_weak_labels(small_corpus, small_ontology, None, cfg, [MatchStage.S1])
    s12 = generate_weak_labels(
        small_corpus, small_ontology, None, cfg, [MatchStage.S1, MatchStage.S2]
    )
    s123 = generate_weak_labels(small_corpus, small_ontology, tiny_embeddings, cfg, list(MatchStage))
    for a, b, c in zip(s1.records, s12.records, s123.records):
        assert set(a.annotations) <= set(b.annotations) <= set(c.annotations)
    assert s1.annotation_count() <= s12.annotation_count() <= s123.annotation_count()


def test_stage_order_does_not_depend_on_argument_order(small_ontology, small_corpus):
    a = generate_weak_labels(
        small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S2, MatchStage.S1]
    )
    b = generate_weak_labels(
        small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S1, MatchStage.S2]
    )
    assert a.stages == [MatchStage.S1, MatchStage.S2]
    assert _rows(a) == _rows(b)


def test_workers_do_not_change_the_output(small_ontology, small_corpus):
    stages = [MatchStage.S1, MatchStage.S2]
    serial = generate_weak_labels(small_corpus * 4, small_ontology, None, MatchConfig(), stages)
    threaded = generate_weak_labels(
        small_corpus * 4, small_ontology, None, MatchConfig(), stages, workers=3
    )
    assert _rows(serial) == _rows(threaded)
    assert serial.stats == threaded.stats


def test_embedding_stage_needs_a_table(small_ontology, small_corpus):
    with pytest.raises(ConfigError):
        generate_weak_labels(small_corpus, small_ontology, None, MatchConfig(), [MatchStage.S3])
    with pytest.raises(ConfigError):
        generate_weak_labels(small_corpus, small_ontology, None, MatchConfig(), [])


def test_embedding_match_is_bounded(small_ontology, tiny_embeddings):
    annotation = match_embedding(
        _chunk("fever"), small_ontology, tiny_embeddings, MatchConfig(tau_emb=0.1)
    )
    assert annotation is not None
    assert annotation.stage is MatchStage.S3
    assert 0.0 < annotation.confidence <= 1.0


def test_progress_is_reported(small_ontology, small_corpus):
    calls = []
    generate_weak_labels(
        small_corpus,
        small_ontology,
        None,
        MatchConfig(),
        [MatchStage.S1],
        progress_callback=lambda p, m: calls.append(p),
    )
    assert calls[-1] == 100
    assert calls == sorted(calls)
