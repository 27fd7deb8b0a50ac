"""Document- and question-level scoring, zero-padding, aggregation and the
on-disk score/summary/error formats."""

from __future__ import annotations

import csv
import json
import math
import threading
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .annotations import LANGUAGES, NESTED_KEYS, KvpAnnotation, QaItem, canonical_key
from .metrics import clean_json, flatten_json, normalize_value, serialize_flat, value_scores

FIXED_KEY_BASELINE = 12
SCORE_COLUMNS = ("doc_name", "language", "valid", "key_match", "em", "bleu", "rouge")
ERROR_STAGES = ("ingest", "agent", "parse", "metric")


@dataclass
class EvalScores:
    doc_name: str
    language: str
    valid: int = 0
    key_match: float = 0.0
    em: float = 0.0
    bleu: float = 0.0
    rouge: float = 0.0

    def as_tuple(self) -> tuple[int, float, float, float, float]:
        return (self.valid, self.key_match, self.em, self.bleu, self.rouge)


@dataclass
class NestedScores:
    doc_name: str
    language: str
    key: str
    em: float = 0.0
    bleu: float = 0.0
    rouge: float = 0.0
    matched: list[str] = field(default_factory=list)
    gt_only: list[str] = field(default_factory=list)
    pred_only: list[str] = field(default_factory=list)


@dataclass
class QaRow:
    doc_name: str
    language: str
    key: str
    question: str
    gt: str
    pred: str
    missing: bool
    em: float
    bleu: float
    rouge: float


@dataclass
class QaScores:
    doc_name: str
    language: str
    questions: int
    em: float
    bleu: float
    rouge: float


@dataclass
class ErrorRecord:
    doc_name: str
    language: str
    stage: str
    message: str
    question_key: str | None = None
    raw_output: str | None = None

    def __post_init__(self) -> None:
        if self.stage not in ERROR_STAGES:
            raise ValueError(f"unknown error stage {self.stage!r}")


class ErrorLog:
    """Append-only error sink; appends are serialized so concurrent
    document evaluations can share one log."""

    def __init__(self) -> None:
        self._records: list[ErrorRecord] = []
        self._lock = threading.Lock()

    def add(self, record: ErrorRecord) -> None:
        with self._lock:
            self._records.append(record)

    @property
    def records(self) -> list[ErrorRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def write_jsonl(self, path: str | Path) -> None:
        lines = [json.dumps(asdict(r), ensure_ascii=False) for r in self.records]
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# -- key-value documents -------------------------------------------------------


def evaluate_kvp_document(
    pred_raw: Any,
    gt: Mapping[str, Any],
    language: str,
    *,
    doc_name: str = "",
    errors: ErrorLog | None = None,
    baseline: int = FIXED_KEY_BASELINE,
) -> EvalScores:
    """Score one (document, language) prediction against its ground truth.

    Keys are matched exactly after normalization. Value metrics are summed
    over matched keys and divided by ``max(|matched|, baseline)`` so that
    missing keys count as zero. Nested ground-truth values are compared in
    their flat serialized form.
    """
    parsed = clean_json(pred_raw)
    if parsed is None:
        if errors is not None:
            raw = pred_raw if isinstance(pred_raw, str) else None
            errors.add(ErrorRecord(doc_name, language, "parse", "prediction is not a JSON object", raw_output=raw))
        return EvalScores(doc_name, language)

    gt_norm = {normalize_value(k, language): v for k, v in gt.items()}
    pred_norm = {normalize_value(k, language): v for k, v in parsed.items()}
    matched = [k for k in gt_norm if k in pred_norm]
    key_match = len(matched) / (len(gt_norm) + 1e-9)

    sums = {"em": 0.0, "bleu": 0.0, "rouge": 0.0}
    for key in matched:
        scores = value_scores(gt_norm[key], pred_norm[key], language)
        for name in sums:
            sums[name] += scores[name]
    z = max(len(matched), baseline)
    return EvalScores(doc_name, language, 1, key_match, sums["em"] / z, sums["bleu"] / z, sums["rouge"] / z)


def _parse_nested(value: Any) -> Any:
    if isinstance(value, (dict, list)):
        return value
    if isinstance(value, str):
        try:
            parsed = json.loads(value)
        except ValueError:
            return None
        return parsed if isinstance(parsed, (dict, list)) else None
    return None


def evaluate_nested_key(
    pred_val: Any,
    gt_val: Any,
    key: str,
    language: str = "en",
    *,
    doc_name: str = "",
    errors: ErrorLog | None = None,
) -> NestedScores:
    """Path-level scores for one nested key. Both values must be JSON
    structures (or JSON text); only paths present on both sides earn
    credit, normalized by ``max(|matched|, 1)``."""
    result = NestedScores(doc_name, language, key)
    pred = _parse_nested(pred_val)
    gt = _parse_nested(gt_val)
    if pred is None or gt is None:
        if errors is not None:
            side = "prediction" if pred is None else "ground truth"
            raw = pred_val if isinstance(pred_val, str) else None
            errors.add(ErrorRecord(doc_name, language, "parse", f"{side} for {key!r} is not JSON", key, raw))
        return result

    pred_paths = flatten_json(pred, key)
    gt_paths = flatten_json(gt, key)
    result.matched = [p for p in gt_paths if p in pred_paths]
    result.gt_only = [p for p in gt_paths if p not in pred_paths]
    result.pred_only = [p for p in pred_paths if p not in gt_paths]

    sums = {"em": 0.0, "bleu": 0.0, "rouge": 0.0}
    for path in result.matched:
        scores = value_scores(gt_paths[path], pred_paths[path], language)
        for name in sums:
            sums[name] += scores[name]
    z = max(len(result.matched), 1)
    result.em, result.bleu, result.rouge = sums["em"] / z, sums["bleu"] / z, sums["rouge"] / z
    return result


# -- question answering --------------------------------------------------------


def answer_text(answer: Any) -> str:
    """Flat text of a model answer; lists are joined with "; "."""
    if answer is None:
        return ""
    if isinstance(answer, list):
        return "; ".join(serialize_flat(a) for a in answer)
    return serialize_flat(answer)


def evaluate_qa(
    predictions: Mapping[tuple[str, str, str], Any],
    gt: Sequence[QaItem],
    *,
    errors: ErrorLog | None = None,
) -> tuple[list[QaRow], list[QaScores]]:
    """Per-question rows and unweighted per-(doc, language) means. A
    question without a prediction is scored against the empty string."""
    rows: list[QaRow] = []
    for item in gt:
        ident = (item.doc_name, item.user_language, item.question)
        missing = ident not in predictions
        pred = "" if missing else answer_text(predictions[ident])
        if missing and errors is not None:
            errors.add(ErrorRecord(item.doc_name, item.user_language, "agent", "no prediction", item.key))
        scores = value_scores(item.value, pred, item.user_language)
        rows.append(
            QaRow(
                item.doc_name, item.user_language, item.key, item.question, item.value, pred, missing,
                scores["em"], scores["bleu"], scores["rouge"],
            )
        )

    groups: dict[tuple[str, str], list[QaRow]] = defaultdict(list)
    for row in rows:
        groups[(row.doc_name, row.language)].append(row)
    averages = [
        QaScores(
            doc, lang, len(group),
            math.fsum(r.em for r in group) / len(group),
            math.fsum(r.bleu for r in group) / len(group),
            math.fsum(r.rouge for r in group) / len(group),
        )
        for (doc, lang), group in groups.items()
    ]
    return rows, averages


# -- aggregation ---------------------------------------------------------------


def macro_aggregate(rows: Iterable[Any], metrics: Sequence[str] | None = None) -> dict[str, Any]:
    """Mean per language over (doc, language) rows, then the unweighted
    mean of the language means."""
    rows = list(rows)
    if metrics is None:
        metrics = ("valid", "key_match", "em", "bleu", "rouge")
    by_lang: dict[str, list[Any]] = defaultdict(list)
    for row in rows:
        by_lang[row.language].append(row)
    per_language = {
        lang: {m: math.fsum(getattr(r, m) for r in group) / len(group) for m in metrics}
        for lang, group in sorted(by_lang.items())
    }
    overall = {
        m: (math.fsum(v[m] for v in per_language.values()) / len(per_language)) if per_language else 0.0
        for m in metrics
    }
    counts = {lang: len(group) for lang, group in sorted(by_lang.items())}
    return {"per_language": per_language, "global": overall, "rows": counts}


# -- datasets ------------------------------------------------------------------


def ground_truth_by_doc(annotations: Iterable[KvpAnnotation]) -> dict[str, dict[str, dict[str, Any]]]:
    """doc -> language -> {key in that language: value}."""
    out: dict[str, dict[str, dict[str, Any]]] = {}
    for ann in annotations:
        per_doc = out.setdefault(ann.doc_name, {lang: {} for lang in LANGUAGES})
        for lang in LANGUAGES:
            per_doc[lang][ann.key(lang)] = ann.value(lang)
    return out


def prediction_for(predictions: Mapping[str, Any], doc: str, language: str, default_language: str | None) -> Any:
    """Look up a raw prediction in a ``doc -> raw`` or ``doc -> {lang: raw}`` map.

    Returns ``None`` when absent."""
    entry = predictions.get(doc)
    if isinstance(entry, dict) and set(entry) <= set(LANGUAGES) and entry:
        return entry.get(language)
    if entry is not None and language == default_language:
        return entry
    return None


def evaluate_kvp_dataset(
    predictions: Mapping[str, Any],
    annotations: Iterable[KvpAnnotation],
    *,
    languages: Sequence[str] = LANGUAGES,
    default_language: str | None = None,
    errors: ErrorLog | None = None,
) -> list[EvalScores]:
    """One row per (doc, language). A missing prediction becomes an
    all-zero row with an error record."""
    gt = ground_truth_by_doc(annotations)
    rows = []
    for doc in sorted(gt):
        for lang in languages:
            raw = prediction_for(predictions, doc, lang, default_language)
            if raw is None:
                if errors is not None:
                    errors.add(ErrorRecord(doc, lang, "agent", "no prediction for document"))
                rows.append(EvalScores(doc, lang))
                continue
            rows.append(evaluate_kvp_document(raw, gt[doc][lang], lang, doc_name=doc, errors=errors))
    return rows


def evaluate_nested_dataset(
    predictions: Mapping[str, Any],
    annotations: Iterable[KvpAnnotation],
    *,
    languages: Sequence[str] = LANGUAGES,
    default_language: str | None = None,
    errors: ErrorLog | None = None,
) -> list[NestedScores]:
    """Path-level scores for every nested key of every (doc, language)."""
    annotations = list(annotations)
    rows = []
    for ann in sorted(annotations, key=lambda a: a.doc_name):
        if canonical_key(ann.key_en) not in NESTED_KEYS:
            continue
        for lang in languages:
            key = ann.key(lang)
            raw = prediction_for(predictions, ann.doc_name, lang, default_language)
            parsed = clean_json(raw) if raw is not None else None
            if parsed is None:
                if errors is not None:
                    message = "no prediction for document" if raw is None else "prediction is not a JSON object"
                    stage = "agent" if raw is None else "parse"
                    errors.add(ErrorRecord(ann.doc_name, lang, stage, message, key))
                rows.append(NestedScores(ann.doc_name, lang, key))
                continue
            pred_val = _lookup_key(parsed, key, lang)
            rows.append(evaluate_nested_key(pred_val, ann.value(lang), key, lang, doc_name=ann.doc_name, errors=errors))
    return rows


def _lookup_key(parsed: Mapping[str, Any], key: str, language: str) -> Any:
    target = normalize_value(key, language)
    for k, v in parsed.items():
        if normalize_value(k, language) == target:
            return v
    return None


# -- files ---------------------------------------------------------------------


def write_scores_csv(rows: Iterable[Any], path: str | Path, *, nested: bool = False) -> None:
    columns = ["doc_name", "language", "key", "em", "bleu", "rouge"] if nested else list(SCORE_COLUMNS)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([getattr(row, c, "") for c in columns])


def write_qa_csv(rows: Iterable[QaRow], path: str | Path) -> None:
    columns = ["doc_name", "language", "key", "question", "gt", "pred", "missing", "em", "bleu", "rouge"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([getattr(row, c) for c in columns])


def read_scores_csv(path: str | Path) -> list[dict[str, Any]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [
            {k: (v if k in ("doc_name", "language", "key", "question", "gt", "pred") else _number(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def _number(text: str) -> Any:
    if text in ("True", "False"):
        return text == "True"
    try:
        return float(text)
    except ValueError:
        return text


def kvp_summary(fixed: Sequence[EvalScores], nested: Sequence[NestedScores] | None = None) -> dict[str, Any]:
    summary: dict[str, Any] = {"fixed_schema": macro_aggregate(fixed)}
    if nested is not None:
        summary["open_schema"] = macro_aggregate(nested, ("em", "bleu", "rouge"))
    return summary


def qa_summary(averages: Sequence[QaScores], nested_averages: Sequence[QaScores] | None = None) -> dict[str, Any]:
    summary: dict[str, Any] = {"all": macro_aggregate(averages, ("em", "bleu", "rouge"))}
    if nested_averages is not None:
        summary["nested"] = macro_aggregate(nested_averages, ("em", "bleu", "rouge"))
    return summary


def write_summary(summary: Mapping[str, Any], path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
