import pytest
from hypothesis import given, strategies as st

from emo_mllm.errors import DataError, InputError
from emo_mllm.metrics import (LabelSet, ScoreReport, format_table, load_label_file, normalize_label,
                              save_label_file, score, score_corpus, score_files)

WORDS = ["happy", "sad", "angry", "surprised", "worried", "calm", "tired"]
label_sets = st.sets(st.sampled_from(WORDS), max_size=5)


def test_forced_examples():
    assert score({"happy", "surprised"}, {"happy"}) == ScoreReport(0.5, 1.0, 0.75)
    assert score({"sad", "angry"}, {"angry", "sad"}) == ScoreReport(1.0, 1.0, 1.0)
    assert score(set(), {"happy"}) == ScoreReport(0.0, 0.0, 0.0)


def test_corpus_examples():
    assert score_corpus([({"a"}, {"a", "b"})]) == score({"a"}, {"a", "b"})
    assert score_corpus([({"x"}, {"x"}), ({"y"}, {"x"})]) == ScoreReport(0.5, 0.5, 0.5)


def test_corpus_mean_matches_brute_force():
    import random

    rnd = random.Random(0)
    pairs = [(set(rnd.sample(WORDS, rnd.randint(0, 4))), set(rnd.sample(WORDS, rnd.randint(1, 4)))) for _ in range(200)]
    acc = rec = 0.0
    for p, t in pairs:
        hits = sum(1 for w in p if w in t)
        acc += hits / len(p) if p else 0.0
        rec += hits / len(t)
    got = score_corpus(pairs)
    assert abs(got.accuracy_s - acc / 200) <= 1e-12
    assert abs(got.recall_s - rec / 200) <= 1e-12
    assert abs(got.avg - (acc + rec) / 400) <= 1e-12


def test_avg_convention_reproduces_reported_row():
    assert abs(ScoreReport.from_parts(63.82, 68.59).avg - 66.21) <= 0.01


def test_normalization_and_synonyms():
    assert normalize_label("  Very   Happy ") == "very happy"
    assert LabelSet.of(["Glad", "happy"], {"glad": "happy"}) == LabelSet.of(["happy"])
    assert score(["HAPPY "], ["happy"]).avg == 1.0


def test_empty_truth_and_corpus_rejected():
    with pytest.raises(InputError):
        score({"happy"}, set())
    with pytest.raises(InputError):
        score_corpus([])


@given(pred=label_sets, truth=label_sets.filter(bool))
def test_scores_bounded_and_avg_is_mean(pred, truth):
    r = score(pred, truth)
    assert 0 <= r.accuracy_s <= 1 and 0 <= r.recall_s <= 1
    assert r.avg == (r.accuracy_s + r.recall_s) / 2


@given(truth=label_sets.filter(bool), extra=label_sets)
def test_superset_prediction_keeps_full_recall(truth, extra):
    assert score(truth | extra, truth).recall_s == 1.0


def test_label_files(tmp_path):
    save_label_file(tmp_path / "p.jsonl", {"a": ["happy", "sad"], "b": []})
    save_label_file(tmp_path / "t.jsonl", {"a": ["happy"], "b": ["calm"]})
    assert load_label_file(tmp_path / "p.jsonl") == {"a": ["happy", "sad"], "b": []}
    corpus, rows = score_files(tmp_path / "p.jsonl", tmp_path / "t.jsonl")
    assert corpus == ScoreReport(0.25, 0.5, 0.375)
    assert [r["id"] for r in rows] == ["a", "b"]
    assert "mean" in format_table(corpus, rows)
    (tmp_path / "bad.jsonl").write_text('{"labels": []}\n')
    with pytest.raises(DataError):
        load_label_file(tmp_path / "bad.jsonl")
    save_label_file(tmp_path / "short.jsonl", {"a": ["happy"]})
    with pytest.raises(DataError):
        score_files(tmp_path / "short.jsonl", tmp_path / "t.jsonl")
