import numpy as np
import pytest

from annotations import WeakAnnotation
from errors import AnnotationError, ConfigError, DataError, FingerprintError
from linker import (
    LinkedEntity,
    LinkerConfig,
    LinkMode,
    LinkSource,
    featurize_mention,
    link,
    link_ensemble,
    link_exact,
    link_mentions,
    linked_to_annotated,
    load_linker,
    mention_from_span,
    read_linked,
    save_linker,
    train_linker,
    write_linked,
)
from evaluation import EvalMode, evaluate_records
from ontology import Ontology, make_concept
from synthcorpus import NoiseConfig, generate_corpus
from textprep import CharSpan, Record, SeparatorConfig


def _fast_config(**changes):
    values = {"epochs": 5, "hidden_dim": 8, "use_embeddings": False, "batch_size": 8}
    values.update(changes)
    return LinkerConfig(**values)


def _training_pairs(gold):
    return [(r.record, a) for r in gold for a in r.annotations]


def _untrained(ont, **changes):
    return train_linker(
        [(Record("r", "fever"), WeakAnnotation("r", CharSpan(0, 5), "C002"))],
        ont,
        _fast_config(epochs=0, **changes),
    )


def test_featurize_directional_context():
    rec = Record("r", "severe chest pain since am")
    m = mention_from_span(rec, CharSpan(7, 17))
    assert m.token_range == (1, 2)
    bundle = featurize_mention(rec, m, window=2)
    assert bundle.mention == ("w=chest", "w=pain")
    assert bundle.left == ("severe@-1",)
    assert bundle.right == ("since@+1", "am@+2")
    assert bundle.phrase == ("chest", "pain")
    assert "<c" in bundle.chars and "ain>" in bundle.chars


def test_context_stops_at_separators():
    rec = Record("r", "fever, chest pain/cough")
    m = mention_from_span(rec, CharSpan(7, 17))
    bundle = featurize_mention(rec, m, window=3)
    assert bundle.left == ()
    assert bundle.right == ()
    assert featurize_mention(rec, m, use_char_features=False).chars == ()


def test_mention_from_span_rejects_spans_without_tokens():
    rec = Record("r", "fever")
    with pytest.raises(AnnotationError):
        mention_from_span(rec, CharSpan(3, 9))


def test_config_validation():
    with pytest.raises(ConfigError):
        LinkerConfig(window=-1)
    with pytest.raises(ConfigError):
        LinkerConfig(hidden_dim=0)


def test_untrained_model_is_uniform(small_ontology):
    model = _untrained(small_ontology)
    rec = Record("r", "chest pain")
    probs = model.distribution(rec, mention_from_span(rec, CharSpan(0, 10)))
    assert np.allclose(probs, 1.0 / len(small_ontology))
    entity = link(model, rec, mention_from_span(rec, CharSpan(0, 10)))
    assert entity.concept_id == "C001"
    assert entity.source is LinkSource.MODEL


def test_exact_match_takes_precedence(small_ontology):
    model = _untrained(small_ontology)
    rec = Record("r", "fever, sore throat")
    fever = mention_from_span(rec, CharSpan(0, 5))
    throat = mention_from_span(rec, CharSpan(7, 18))
    entity = link_ensemble(small_ontology, model, rec, fever)
    assert (entity.concept_id, entity.score, entity.source) == ("C002", 1.0, LinkSource.EXACT_MATCH)
    assert link_exact(small_ontology, rec, throat) is None
    assert link_ensemble(small_ontology, model, rec, throat).source is LinkSource.MODEL


def test_link_modes(small_ontology):
    model = _untrained(small_ontology)
    rec = Record("r", "fever, sore throat")
    mentions = [mention_from_span(rec, CharSpan(0, 5)), mention_from_span(rec, CharSpan(7, 18))]
    assert len(link_mentions(mentions, rec, LinkMode.EXACT, small_ontology)) == 1
    assert len(link_mentions(mentions, rec, LinkMode.MODEL, small_ontology, model)) == 2
    ensemble = link_mentions(mentions, rec, LinkMode.ENSEMBLE, small_ontology, model)
    assert [e.source for e in ensemble] == [LinkSource.EXACT_MATCH, LinkSource.MODEL]
    with pytest.raises(ConfigError):
        link_mentions(mentions, rec, LinkMode.MODEL, small_ontology)


@pytest.mark.slow
def test_training_fits_clean_mentions(synth_ontology, clean_gold):
    _, gold = clean_gold
    data = _training_pairs(gold)
    model = train_linker(data, synth_ontology, _fast_config(epochs=40, learning_rate=0.3, hidden_dim=16))
    correct = 0
    for rec, ann in data:
        entity = link(model, rec, mention_from_span(rec, ann.span))
        correct += entity.concept_id == ann.concept_id
    assert correct / len(data) >= 0.9
    losses = model.metadata["loss_history"]
    assert losses[-1] < losses[0]


def test_distribution_is_normalized(synth_ontology, clean_gold):
    _, gold = clean_gold
    data = _training_pairs(gold)
    model = train_linker(data, synth_ontology, _fast_config())
    for rec, ann in data[:20]:
        probs = model.distribution(rec, mention_from_span(rec, ann.span))
        assert probs.shape == (len(synth_ontology),)
        assert probs.sum() == pytest.approx(1.0)
        assert np.all(probs >= 0.0)


def test_zero_weight_examples_do_not_train(synth_ontology, clean_gold):
    _, gold = clean_gold
    data = _training_pairs(gold)[:40]
    trained = train_linker(data, synth_ontology, _fast_config(), seed=3, weights=[0.0] * len(data))
    untouched = train_linker(data, synth_ontology, _fast_config(epochs=0), seed=3)
    for name, values in trained.parameters().items():
        assert np.array_equal(values, untouched.parameters()[name]), name


def test_training_is_deterministic(synth_ontology, clean_gold):
    _, gold = clean_gold
    data = _training_pairs(gold)
    a = train_linker(data, synth_ontology, _fast_config(), seed=4)
    b = train_linker(data, synth_ontology, _fast_config(), seed=4)
    for name, values in a.parameters().items():
        assert np.array_equal(values, b.parameters()[name]), name


def test_training_errors(small_ontology):
    rec = Record("r", "fever")
    with pytest.raises(DataError):
        train_linker([], small_ontology, _fast_config())
    with pytest.raises(AnnotationError):
        train_linker([(rec, WeakAnnotation("r", CharSpan(0, 5), "C999"))], small_ontology, _fast_config())
    with pytest.raises(ConfigError):
        train_linker(
            [(rec, WeakAnnotation("r", CharSpan(0, 5), "C002"))],
            small_ontology,
            _fast_config(),
            weights=[1.0, 1.0],
        )


def test_embeddings_join_the_input(small_ontology, tiny_embeddings):
    rec = Record("r", "fever")
    model = train_linker(
        [(rec, WeakAnnotation("r", CharSpan(0, 5), "C002"))],
        small_ontology,
        _fast_config(use_embeddings=True),
        embeddings=tiny_embeddings,
    )
    assert model.dense_dim == tiny_embeddings.dim
    assert model.weights.shape == (4 * 8 + tiny_embeddings.dim, len(small_ontology))
    m = mention_from_span(rec, CharSpan(0, 5))
    assert link(model, rec, m, tiny_embeddings).concept_id == "C002"
    with pytest.raises(ConfigError):
        link(model, rec, m)


def test_save_load_round_trip(tmp_path, synth_ontology, clean_gold):
    _, gold = clean_gold
    data = _training_pairs(gold)
    model = train_linker(data, synth_ontology, _fast_config())
    path = str(tmp_path / "linker.bin")
    save_linker(model, path)
    loaded = load_linker(path, synth_ontology)
    assert loaded.classes == model.classes
    assert loaded.features == model.features
    for rec, ann in data[:10]:
        m = mention_from_span(rec, ann.span)
        assert np.allclose(loaded.distribution(rec, m), model.distribution(rec, m))


def test_ontology_fingerprint_mismatch_is_rejected(tmp_path, small_ontology):
    path = str(tmp_path / "linker.bin")
    save_linker(_untrained(small_ontology), path)
    other = Ontology([make_concept("C001", "chest pain")])
    with pytest.raises(FingerprintError):
        load_linker(path, other)


def test_linked_file_and_annotation_view(tmp_path):
    records = [Record("a", "fever, cough"), Record("b", "back pain")]
    by_id = {r.id: r for r in records}
    entities = [
        LinkedEntity(mention_from_span(records[0], CharSpan(7, 12)), "C9", 0.4, LinkSource.MODEL),
        LinkedEntity(mention_from_span(records[0], CharSpan(0, 5)), "C2", 1.0, LinkSource.EXACT_MATCH),
    ]
    path = str(tmp_path / "linked.jsonl")
    assert write_linked(path, entities) == 2
    assert read_linked(path, by_id) == entities
    annotated = linked_to_annotated(records, entities)
    assert [a.span for a in annotated[0].annotations] == [CharSpan(0, 5), CharSpan(7, 12)]
    assert annotated[1].annotations == []
    with pytest.raises(DataError):
        read_linked(path, {"b": records[1]})


def test_separator_config_is_kept(small_ontology, tmp_path):
    cfg = SeparatorConfig(slash_min_run=1)
    model = train_linker(
        [(Record("r", "n/v"), WeakAnnotation("r", CharSpan(0, 1), "C003"))],
        small_ontology,
        _fast_config(epochs=1),
        sep_cfg=cfg,
    )
    path = str(tmp_path / "linker.bin")
    save_linker(model, path)
    assert load_linker(path).separator_config == cfg


def _context_pairs(copies=10):
    # the mention reads "pain" in every example; only the left word tells the concepts apart
    pairs = []
    for n in range(copies):
        sharp = Record(f"s{n}", "severe pain")
        dull = Record(f"d{n}", "mild pain")
        pairs.append((sharp, WeakAnnotation(sharp.id, CharSpan(7, 11), "A1")))
        pairs.append((dull, WeakAnnotation(dull.id, CharSpan(5, 9), "B1")))
    return pairs


@pytest.mark.slow
def test_context_window_separates_identical_mentions():
    ont = Ontology([make_concept("A1", "sharp pain"), make_concept("B1", "dull pain")])
    data = _context_pairs()
    accuracy = {}
    for window in (2, 0):
        model = train_linker(data, ont, _fast_config(window=window, epochs=30, learning_rate=0.3))
        hits = sum(
            link(model, rec, mention_from_span(rec, ann.span)).concept_id == ann.concept_id
            for rec, ann in data
        )
        accuracy[window] = hits / len(data)
    assert accuracy[2] >= 0.9
    assert accuracy[0] <= 0.5


@pytest.mark.slow
def test_ensemble_recovers_what_exact_linking_misses(synth_ontology):
    _, train_gold = generate_corpus(synth_ontology, 120, NoiseConfig(), seed=6)
    records, gold = generate_corpus(synth_ontology, 60, NoiseConfig(), seed=7)
    model = train_linker(
        _training_pairs(train_gold), synth_ontology, _fast_config(epochs=20, learning_rate=0.3, hidden_dim=16)
    )
    recall = {}
    for mode in (LinkMode.EXACT, LinkMode.ENSEMBLE):
        entities = []
        for rec, truth in zip(records, gold):
            mentions = [mention_from_span(rec, a.span) for a in truth.annotations]
            entities.extend(link_mentions(mentions, rec, mode, synth_ontology, model))
        report = evaluate_records(gold, linked_to_annotated(records, entities), [EvalMode.TYPE])
        recall[mode] = report[EvalMode.TYPE].recall
    assert recall[LinkMode.ENSEMBLE] > recall[LinkMode.EXACT]
