import json
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from annotations import AnnotatedRecord, WeakAnnotation, read_annotation_file, write_annotation_file
from errors import AnnotationError, EvaluationError
from evaluation import (
    EvalCounts,
    EvalMode,
    EvalReport,
    Subset,
    TypedSpan,
    align,
    evaluate_corpus,
    evaluate_records,
    score,
)
from textprep import CharSpan

PARTIAL, EXACT, TYPE = EvalMode.PARTIAL, EvalMode.EXACT, EvalMode.TYPE


def _spans(*triples):
    return [TypedSpan(s, e, c) for s, e, c in triples]


# (gold, predicted) pairs scored by hand in every mode
CASES = [
    (_spans((0, 5, "A")), _spans((0, 5, "A"))),
    (_spans((0, 10, "A")), _spans((0, 5, "A"))),
    (_spans((0, 10, "A")), []),
    ([], _spans((0, 4, "A"))),
    (_spans((0, 5, "A")), _spans((0, 5, "B"))),
    (_spans((0, 5, "A"), (7, 12, "B")), _spans((0, 12, "A"))),
    (_spans((0, 12, "A")), _spans((0, 5, "A"), (7, 12, "B"))),
    (_spans((3, 8, "A")), _spans((0, 4, "B"))),
    (_spans((0, 5, "A")), _spans((6, 10, "A"))),
    (_spans((0, 5, "A"), (6, 11, "B")), _spans((0, 5, "A"), (6, 11, "B"))),
    (_spans((0, 5, "A"), (6, 11, "B")), _spans((6, 11, "A"))),
    (_spans((0, 8, "A")), _spans((2, 6, "A"))),
    (_spans((0, 4, "A"), (5, 9, "B"), (10, 14, "C")), _spans((0, 4, "A"), (5, 14, "B"))),
    (_spans((0, 6, "A")), _spans((0, 6, "A"), (8, 10, "B"))),
    (_spans((2, 9, "A")), _spans((0, 3, "A"), (8, 12, "A"))),
    (_spans((0, 5, "A")), _spans((0, 5, "A"))),
    (_spans((0, 3, "A"), (4, 7, "B")), []),
    ([], []),
    (_spans((0, 10, "A")), _spans((0, 10, "B"))),
    (_spans((0, 5, "A"), (10, 15, "B")), _spans((3, 12, "C"))),
    (_spans((0, 4, "A")), _spans((0, 4, "A"))),
    (_spans((0, 9, "A")), _spans((0, 9, "A"))),
]

EXPECTED = {
    PARTIAL: (EvalCounts(COR=11, INC=0, PAR=8, MIS=8, SPU=5), Fraction(15, 24), Fraction(15, 27), Fraction(30, 51)),
    EXACT: (EvalCounts(COR=11, INC=8, PAR=0, MIS=8, SPU=5), Fraction(11, 24), Fraction(11, 27), Fraction(22, 51)),
    TYPE: (EvalCounts(COR=14, INC=5, PAR=0, MIS=8, SPU=5), Fraction(14, 24), Fraction(14, 27), Fraction(28, 51)),
}


@st.composite
def disjoint_spans(draw):
    bounds = sorted(draw(st.sets(st.integers(min_value=0, max_value=60), max_size=12)))
    if len(bounds) % 2:
        bounds = bounds[:-1]
    concepts = draw(st.lists(st.sampled_from("AB"), min_size=len(bounds) // 2, max_size=len(bounds) // 2))
    return [TypedSpan(s, e, c) for (s, e), c in zip(zip(bounds[::2], bounds[1::2]), concepts)]


@pytest.mark.parametrize("mode", list(EvalMode))
def test_hand_scored_cases(mode):
    total = EvalCounts()
    for gold, pred in CASES:
        total = total + align(gold, pred, mode)
    counts, precision, recall, f1 = EXPECTED[mode]
    assert total == counts
    assert (total.possible, total.actual) == (27, 24)
    assert score(total, mode) == pytest.approx((float(precision), float(recall), float(f1)))


def test_single_case_counts():
    gold, pred = CASES[12]
    assert align(gold, pred, PARTIAL) == EvalCounts(COR=1, PAR=1, MIS=1)
    assert align(gold, pred, EXACT) == EvalCounts(COR=1, INC=1, MIS=1)
    assert align(gold, pred, TYPE) == EvalCounts(COR=2, MIS=1)


def test_empty_scores_are_zero():
    assert score(EvalCounts(), PARTIAL) == (0.0, 0.0, 0.0)


def test_invalid_inputs():
    with pytest.raises(EvaluationError):
        align(_spans((0, 5, "A"), (3, 8, "B")), [], PARTIAL)
    with pytest.raises(EvaluationError):
        align([], _spans((0, 5, "A"), (4, 8, "B")), PARTIAL)
    with pytest.raises(EvaluationError):
        align([TypedSpan(0, 5)], [TypedSpan(0, 5)], TYPE)
    assert align([TypedSpan(0, 5)], [TypedSpan(0, 5)], EXACT) == EvalCounts(COR=1)


@given(disjoint_spans(), disjoint_spans())
def test_counts_cover_every_span(gold, pred):
    for mode in EvalMode:
        c = align(gold, pred, mode)
        assert c.possible == len(gold)
        assert c.actual == len(pred)


@given(disjoint_spans(), disjoint_spans())
def test_modes_share_one_alignment(gold, pred):
    partial, exact, typed = (align(gold, pred, m) for m in EvalMode)
    assert partial.COR == exact.COR
    assert partial.PAR == exact.INC
    assert typed.COR + typed.INC == exact.COR + exact.INC
    assert score(partial, PARTIAL)[2] >= score(exact, EXACT)[2]


@given(disjoint_spans(), disjoint_spans())
def test_exact_matches_do_not_depend_on_direction(gold, pred):
    assert align(gold, pred, EXACT).COR == align(pred, gold, EXACT).COR
    assert align(gold, gold, EXACT) == EvalCounts(COR=len(gold))


def _record(record_id, text, *spans):
    annotations = [WeakAnnotation(record_id, CharSpan(s, e), c) for s, e, c in spans]
    return AnnotatedRecord(record_id, text, annotations)


@pytest.fixture
def gold_and_pred():
    gold = [
        _record("a", "chest pain/fever", (0, 10, "C001"), (11, 16, "C002")),
        _record("b", "chest pain fever", (0, 10, "C001"), (11, 16, "C002")),
        _record("c", "n/v x3 days", (0, 3, "C003")),
    ]
    pred = [
        _record("a", "chest pain/fever", (0, 10, "C001"), (11, 16, "C002")),
        _record("b", "chest pain fever", (0, 16, "C001")),
    ]
    return gold, pred


def test_evaluate_records_and_subsets(gold_and_pred):
    gold, pred = gold_and_pred
    report = evaluate_records(gold, pred)
    assert report.records == 3
    assert report[EXACT].counts == EvalCounts(COR=2, INC=1, MIS=2)
    assert report[TYPE].counts == EvalCounts(COR=3, MIS=2)
    with_punct = evaluate_records(gold, pred, subset=Subset.WITH_PUNCT)
    assert with_punct.records == 1
    assert with_punct[PARTIAL].f1 == 1.0
    no_punct = evaluate_records(gold, pred, subset=Subset.NO_PUNCT)
    assert no_punct.records == 2
    assert no_punct[PARTIAL].counts == EvalCounts(PAR=1, MIS=2)


def test_unknown_predicted_record_is_an_error(gold_and_pred):
    gold, pred = gold_and_pred
    with pytest.raises(EvaluationError):
        evaluate_records(gold[:1], pred)


def test_evaluate_corpus_and_report_file(tmp_path, gold_and_pred):
    gold, pred = gold_and_pred
    gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
    write_annotation_file(str(gold_path), gold)
    write_annotation_file(str(pred_path), pred)
    report = evaluate_corpus(str(gold_path), str(pred_path))
    assert report.to_json() == evaluate_records(gold, pred).to_json()

    out = tmp_path / "report" / "report.json"
    report.save(str(out))
    saved = json.loads(out.read_text(encoding="utf-8"))
    assert saved["records"] == 3
    assert saved["subset"] == "all"
    assert set(saved) == {"records", "subset", "partial", "exact", "type"}
    assert saved["exact"]["counts"] == {"COR": 2, "INC": 1, "PAR": 0, "MIS": 2, "SPU": 0}


def test_report_from_counts():
    report = EvalReport.from_counts({PARTIAL: EvalCounts(COR=1, PAR=2, SPU=1)}, records=1)
    assert report[PARTIAL].precision == pytest.approx(0.5)
    assert report[PARTIAL].recall == pytest.approx(2 / 3)


def test_untyped_predictions_are_scored_on_boundaries(gold_and_pred):
    gold, pred = gold_and_pred
    untyped = [
        _record(r.record_id, r.text, *((a.span.start, a.span.end, None) for a in r.annotations))
        for r in pred
    ]
    report = evaluate_records(gold, untyped)
    assert set(report.modes) == {PARTIAL, EXACT}
    assert report[EXACT].counts == evaluate_records(gold, pred)[EXACT].counts
    with pytest.raises(EvaluationError):
        evaluate_records(gold, untyped, [TYPE])


def _write_lines(path, rows):
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")


def test_evaluator_ignores_confidence_and_stage(tmp_path, gold_and_pred):
    gold, _ = gold_and_pred
    gold_path, pred_path = tmp_path / "gold.jsonl", tmp_path / "pred.jsonl"
    write_annotation_file(str(gold_path), gold)
    _write_lines(
        pred_path,
        [
            {
                "record_id": "a",
                "text": "chest pain/fever",
                "annotations": [
                    {"start": 0, "end": 10, "concept": "C001", "confidence": 0},
                    {"start": 11, "end": 16, "concept": None, "stage": "S9"},
                ],
            }
        ],
    )
    report = evaluate_corpus(str(gold_path), str(pred_path))
    assert report[EXACT].counts == EvalCounts(COR=2, MIS=3)
    with pytest.raises(AnnotationError):
        read_annotation_file(str(pred_path))


@pytest.mark.parametrize(
    "row",
    [
        {"record_id": "a", "text": "fever", "annotations": None},
        {"record_id": "a", "text": "fever", "annotations": [3]},
        {"record_id": "a", "text": "fever", "unmatched_spans": {"start": 0}},
    ],
)
def test_malformed_annotation_lists_are_reported_with_their_line(tmp_path, row):
    path = tmp_path / "pred.jsonl"
    _write_lines(path, [{"record_id": "z", "text": "cough"}, row])
    for strict in (True, False):
        with pytest.raises(AnnotationError) as info:
            read_annotation_file(str(path), strict=strict)
        assert info.value.line == 2
        assert str(path) in str(info.value)
