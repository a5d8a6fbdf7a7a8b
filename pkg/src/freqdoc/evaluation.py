"""Answer scoring and benchmark-style report tables.

A response counts as correct when any ground truth appears inside it after
both sides are normalized (NFC, casefolded to lower, whitespace collapsed).
Dataset accuracy is percentage correct; the aggregate is the unweighted mean
over datasets.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from typing import Iterable

from .errors import ValidationError


def normalize_text(text: str) -> str:
    return " ".join(unicodedata.normalize("NFC", text).lower().split())


@dataclass(frozen=True)
class EvalSample:
    id: str
    dataset: str
    ground_truths: tuple[str, ...]
    response: str

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("sample id must be non-empty")
        if not self.dataset:
            raise ValidationError("sample dataset must be non-empty")
        if not self.ground_truths or any(not g for g in self.ground_truths):
            raise ValidationError("ground truths must be non-empty strings")
        if not isinstance(self.response, str):
            raise ValidationError("response must be a string")


def parse_sample(obj: dict) -> EvalSample:
    """Read one response record; either ground_truth or ground_truths."""
    if not isinstance(obj, dict):
        raise ValidationError("sample must be a JSON object")
    sample_id = obj.get("id")
    if not isinstance(sample_id, str) or not sample_id:
        raise ValidationError("id must be a non-empty string")
    dataset = obj.get("dataset")
    if not isinstance(dataset, str) or not dataset:
        raise ValidationError("dataset must be a non-empty string")
    if "ground_truths" in obj:
        raw = obj["ground_truths"]
        if not isinstance(raw, list) or not raw or not all(
            isinstance(g, str) and g for g in raw
        ):
            raise ValidationError("ground_truths must be a non-empty list of strings")
        truths = tuple(raw)
    elif "ground_truth" in obj:
        raw = obj["ground_truth"]
        if not isinstance(raw, str) or not raw:
            raise ValidationError("ground_truth must be a non-empty string")
        truths = (raw,)
    else:
        raise ValidationError("sample lacks ground_truth or ground_truths")
    response = obj.get("response")
    if not isinstance(response, str):
        raise ValidationError("response must be a string")
    return EvalSample(id=sample_id, dataset=dataset, ground_truths=truths, response=response)


def contains_match(sample: EvalSample, normalize: bool = True) -> bool:
    """True when any ground truth is a substring of the response."""
    if normalize:
        response = normalize_text(sample.response)
        return any(normalize_text(g) in response for g in sample.ground_truths)
    return any(g in sample.response for g in sample.ground_truths)


@dataclass(frozen=True)
class DatasetScore:
    dataset: str
    correct: int
    total: int

    def __post_init__(self) -> None:
        if not self.dataset:
            raise ValidationError("dataset name must be non-empty")
        if self.total < 1:
            raise ValidationError("total must be positive")
        if not 0 <= self.correct <= self.total:
            raise ValidationError("correct must lie in [0, total]")

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.total


def score_dataset(samples: Iterable[EvalSample], normalize: bool = True) -> DatasetScore:
    items = list(samples)
    if not items:
        raise ValidationError("cannot score an empty dataset")
    names = {s.dataset for s in items}
    if len(names) != 1:
        raise ValidationError(f"samples span multiple datasets: {sorted(names)}")
    correct = sum(contains_match(s, normalize=normalize) for s in items)
    return DatasetScore(dataset=items[0].dataset, correct=correct, total=len(items))


@dataclass(frozen=True)
class EvalReport:
    per_dataset: tuple[DatasetScore, ...]

    def __post_init__(self) -> None:
        if not self.per_dataset:
            raise ValidationError("report needs at least one dataset")
        names = [s.dataset for s in self.per_dataset]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate dataset names in report")

    @property
    def macro_average(self) -> float:
        return sum(s.accuracy for s in self.per_dataset) / len(self.per_dataset)

    def score_for(self, dataset: str) -> DatasetScore:
        for score in self.per_dataset:
            if score.dataset == dataset:
                return score
        raise ValidationError(f"no score recorded for {dataset!r}")


def aggregate_report(scores: Iterable[DatasetScore]) -> EvalReport:
    """Combine per-dataset scores; input order is preserved in output."""
    return EvalReport(per_dataset=tuple(scores))


def report_to_json(report: EvalReport) -> str:
    payload = {
        "per_dataset": {
            s.dataset: {
                "correct": s.correct,
                "total": s.total,
                "accuracy": round(s.accuracy, 2),
            }
            for s in report.per_dataset
        },
        "macro_average": round(report.macro_average, 2),
    }
    return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"


def render_table(report: EvalReport) -> str:
    """Two-row text table: dataset names, then accuracies plus Avg."""
    headers = [s.dataset for s in report.per_dataset] + ["Avg."]
    values = [f"{s.accuracy:.2f}" for s in report.per_dataset]
    values.append(f"{report.macro_average:.2f}")
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    head = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    body = "  ".join(v.rjust(w) for v, w in zip(values, widths))
    return head.rstrip() + "\n" + body + "\n"
