"""Set-overlap scores for open-vocabulary emotion labels.

``accuracy_s = |pred & truth| / |pred|`` (0 for an empty prediction),
``recall_s = |pred & truth| / |truth|`` and ``avg`` is their mean. Labels are
compared after lowercasing and trimming; an optional synonym table maps
variants onto a canonical label first.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DataError, InputError


def normalize_label(label: str, synonyms: Mapping[str, str] | None = None) -> str:
    norm = " ".join(label.strip().lower().split())
    if synonyms:
        norm = synonyms.get(norm, norm)
    return norm


@dataclass(frozen=True)
class LabelSet:
    labels: frozenset[str]

    @classmethod
    def of(cls, labels: Iterable[str], synonyms: Mapping[str, str] | None = None) -> "LabelSet":
        normed = (normalize_label(s, synonyms) for s in labels)
        return cls(frozenset(s for s in normed if s))

    def __len__(self):
        return len(self.labels)


@dataclass(frozen=True)
class ScoreReport:
    accuracy_s: float
    recall_s: float
    avg: float

    @classmethod
    def from_parts(cls, accuracy_s: float, recall_s: float) -> "ScoreReport":
        return cls(accuracy_s, recall_s, (accuracy_s + recall_s) / 2)


def _as_set(x) -> LabelSet:
    return x if isinstance(x, LabelSet) else LabelSet.of(x)


def score(pred, truth) -> ScoreReport:
    pred, truth = _as_set(pred), _as_set(truth)
    if not truth.labels:
        raise InputError("ground-truth label set is empty")
    hits = len(pred.labels & truth.labels)
    accuracy = hits / len(pred) if len(pred) else 0.0
    return ScoreReport.from_parts(accuracy, hits / len(truth))


def score_corpus(pairs: Sequence[tuple]) -> ScoreReport:
    if not pairs:
        raise InputError("no (prediction, truth) pairs to score")
    reports = [score(p, t) for p, t in pairs]
    n = len(reports)
    return ScoreReport.from_parts(sum(r.accuracy_s for r in reports) / n, sum(r.recall_s for r in reports) / n)


# Label file (JSON lines): {"id": "scene_0001", "labels": ["happy", "surprised"]}


def load_label_file(path) -> dict[str, list[str]]:
    out = {}
    for k, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            out[str(rec["id"])] = [str(s) for s in rec["labels"]]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{k}: malformed label record ({exc})") from exc
    return out


def save_label_file(path, records: Mapping[str, Sequence[str]]) -> None:
    lines = [json.dumps({"id": k, "labels": list(v)}) for k, v in records.items()]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_synonyms(path) -> dict[str, str]:
    """JSON mapping ``{"glad": "happy", ...}``; keys and values are normalized."""
    doc = json.loads(Path(path).read_text())
    return {normalize_label(k): normalize_label(v) for k, v in doc.items()}


def score_files(pred_path, truth_path, synonyms: Mapping[str, str] | None = None):
    preds, truths = load_label_file(pred_path), load_label_file(truth_path)
    missing = sorted(set(truths) - set(preds))
    if missing:
        raise DataError(f"predictions missing for {missing[:5]}{'...' if len(missing) > 5 else ''}")
    rows = []
    pairs = []
    for sid in sorted(truths):
        p, t = LabelSet.of(preds[sid], synonyms), LabelSet.of(truths[sid], synonyms)
        pairs.append((p, t))
        rows.append({"id": sid, **asdict(score(p, t))})
    return score_corpus(pairs), rows


def format_table(corpus: ScoreReport, rows: Sequence[dict]) -> str:
    lines = [f"{'id':<16} {'Avg':>7} {'Accuracy_S':>11} {'Recall_S':>9}"]
    for r in rows:
        lines.append(f"{r['id']:<16} {100 * r['avg']:7.2f} {100 * r['accuracy_s']:11.2f} {100 * r['recall_s']:9.2f}")
    lines.append(f"{'mean':<16} {100 * corpus.avg:7.2f} {100 * corpus.accuracy_s:11.2f} {100 * corpus.recall_s:9.2f}")
    return "\n".join(lines)
