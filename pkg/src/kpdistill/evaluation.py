"""Benchmark ingestion, trace scoring, and the error-analysis workflow.

Adapter file-format assumptions (each is the dataset's own published form):

* gsm8k: JSONL with ``question`` and ``answer``; the gold number follows the
  final ``#### `` marker of the answer text.
* asdiv: XML corpus; each ``Problem`` element has ``Body``, ``Question`` and
  ``Answer`` children; the answer's leading token is the gold number (a
  trailing unit in parentheses is ignored). Non-numeric answers are skipped.
* svamp: one JSON array; items carry ``ID``, ``Body``, ``Question``,
  ``Answer``.
* multiarith: one JSON array; items carry ``iIndex``, ``sQuestion``,
  ``lSolutions`` (first entry is the gold number).
* generic_jsonl: JSONL with ``id``, ``question``, ``answer`` -- the escape
  hatch for anything else.
"""

from __future__ import annotations

import json
import logging
import random
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence

from .codec import DEFAULT_TOLERANCE, NotANumber, answers_match, normalize_number, verify_arithmetic_steps
from .errors import PipelineError
from .records import InferenceTrace, MathProblem, NumericAnswer, Source

logger = logging.getLogger(__name__)

ERROR_LABELS = ("understanding", "calculation", "step_missing")


class MalformedRecord(PipelineError):
    pass


class UnknownAdapter(PipelineError):
    pass


class UnknownProblemId(PipelineError):
    pass


class NotEnoughTraces(PipelineError):
    pass


class InvalidLabel(PipelineError):
    pass


def _answer(raw: Any) -> Optional[NumericAnswer]:
    try:
        return NumericAnswer(value=normalize_number(str(raw)), raw=str(raw))
    except NotANumber:
        return None


def _ingest_gsm8k(path: Path) -> Iterable[tuple[str, str, Optional[NumericAnswer]]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                item = json.loads(line)
                question, answer_text = item["question"], item["answer"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
            marker = re.search(r"####\s*(.+)\s*$", answer_text)
            gold = _answer(marker.group(1)) if marker else None
            yield f"gsm8k-{lineno}", question, gold


def _ingest_asdiv(path: Path) -> Iterable[tuple[str, str, Optional[NumericAnswer]]]:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise MalformedRecord(f"{path}: invalid XML: {exc}") from exc
    for problem in root.iter("Problem"):
        pid = problem.get("ID", "")
        body = (problem.findtext("Body") or "").strip()
        question = (problem.findtext("Question") or "").strip()
        answer_text = (problem.findtext("Answer") or "").strip()
        if not pid or not (body or question):
            raise MalformedRecord(f"{path}: Problem element missing ID or text")
        gold = _answer(answer_text.split("(")[0])
        yield pid, f"{body} {question}".strip(), gold


def _ingest_json_array(path: Path) -> list[Any]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedRecord(f"{path}: expected a top-level JSON array")
    return data


def _ingest_svamp(path: Path) -> Iterable[tuple[str, str, Optional[NumericAnswer]]]:
    for i, item in enumerate(_ingest_json_array(path)):
        try:
            pid = str(item["ID"])
            question = f"{item['Body'].strip()} {item['Question'].strip()}"
            gold = _answer(item["Answer"])
        except (KeyError, TypeError, AttributeError) as exc:
            raise MalformedRecord(f"{path}: item {i}: {exc}") from exc
        yield pid, question, gold


def _ingest_multiarith(path: Path) -> Iterable[tuple[str, str, Optional[NumericAnswer]]]:
    for i, item in enumerate(_ingest_json_array(path)):
        try:
            pid = f"multiarith-{item['iIndex']}"
            question = item["sQuestion"].strip()
            solutions = item["lSolutions"]
            gold = _answer(solutions[0]) if solutions else None
        except (KeyError, TypeError, IndexError, AttributeError) as exc:
            raise MalformedRecord(f"{path}: item {i}: {exc}") from exc
        yield pid, question, gold


def _ingest_generic(path: Path) -> Iterable[tuple[str, str, Optional[NumericAnswer]]]:
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                item = json.loads(line)
                pid, question = str(item["id"]), item["question"]
                gold = _answer(item["answer"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedRecord(f"{path}:{lineno}: {exc}") from exc
            yield pid, question, gold


_ADAPTERS = {
    "gsm8k": (_ingest_gsm8k, Source.GSM8K),
    "asdiv": (_ingest_asdiv, Source.ASDIV),
    "svamp": (_ingest_svamp, Source.SVAMP),
    "multiarith": (_ingest_multiarith, Source.MULTIARITH),
    "generic_jsonl": (_ingest_generic, Source.CUSTOM),
}


def ingest_benchmark(path: str | Path, adapter: str) -> list[MathProblem]:
    """Load a benchmark file into the common problem schema.

    Items whose gold answer is not numeric are skipped; the skip count is
    logged so retained totals stay transparent.
    """
    if adapter not in _ADAPTERS:
        raise UnknownAdapter(f"unknown adapter {adapter!r}; choose from {sorted(_ADAPTERS)}")
    reader, source = _ADAPTERS[adapter]
    problems, skipped = [], 0
    for pid, question, gold in reader(Path(path)):
        if gold is None:
            skipped += 1
            continue
        problems.append(MathProblem(id=pid, question=question, gold_answer=gold, source=source))
    if skipped:
        logger.info("adapter %s: skipped %d items with non-numeric gold answers", adapter, skipped)
    return problems


@dataclass(frozen=True)
class DatasetAccuracy:
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass(frozen=True)
class AccuracyReport:
    per_dataset: Mapping[str, DatasetAccuracy]
    n: int
    correct: int
    failure_counts: Mapping[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0

    @property
    def macro_average(self) -> float:
        groups = list(self.per_dataset.values())
        return sum(g.accuracy for g in groups) / len(groups) if groups else 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_dataset": {
                name: {"n": g.n, "correct": g.correct, "accuracy": g.accuracy}
                for name, g in sorted(self.per_dataset.items())
            },
            "n": self.n,
            "correct": self.correct,
            "accuracy": self.accuracy,
            "macro_average": self.macro_average,
            "failure_counts": dict(sorted(self.failure_counts.items())),
        }


def score(
    traces: Sequence[InferenceTrace],
    problems: Sequence[MathProblem],
    tol=DEFAULT_TOLERANCE,
) -> AccuracyReport:
    """Mark each trace correct iff its prediction matches the gold answer."""
    by_id = {p.id: p for p in problems}
    per_dataset: dict[str, list[bool]] = {}
    failure_counts: Counter[str] = Counter()
    correct_total = 0
    for trace in traces:
        problem = by_id.get(trace.problem_id)
        if problem is None:
            raise UnknownProblemId(f"trace references unknown problem {trace.problem_id!r}")
        correct = trace.predicted is not None and answers_match(
            trace.predicted, problem.gold_answer, tol
        )
        if trace.failure is not None:
            failure_counts[trace.failure.value] += 1
        per_dataset.setdefault(problem.source.value, []).append(correct)
        correct_total += int(correct)
    return AccuracyReport(
        per_dataset={
            name: DatasetAccuracy(n=len(marks), correct=sum(marks))
            for name, marks in per_dataset.items()
        },
        n=len(traces),
        correct=correct_total,
        failure_counts=dict(failure_counts),
    )


def is_incorrect(trace: InferenceTrace, problem: MathProblem, tol=DEFAULT_TOLERANCE) -> bool:
    return trace.predicted is None or not answers_match(trace.predicted, problem.gold_answer, tol)


def sample_for_analysis(
    traces: Sequence[InferenceTrace],
    problems: Sequence[MathProblem],
    n: int,
    seed: int,
    only_incorrect: bool = True,
    tol=DEFAULT_TOLERANCE,
) -> list[dict[str, Any]]:
    """Seeded uniform sample (without replacement) as an annotation worksheet."""
    by_id = {p.id: p for p in problems}
    eligible = []
    for trace in traces:
        problem = by_id.get(trace.problem_id)
        if problem is None:
            raise UnknownProblemId(f"trace references unknown problem {trace.problem_id!r}")
        if not only_incorrect or is_incorrect(trace, problem, tol):
            eligible.append((trace, problem))
    if n > len(eligible):
        raise NotEnoughTraces(f"requested {n} but only {len(eligible)} traces are eligible")
    rng = random.Random(seed)
    rows = []
    for trace, problem in rng.sample(eligible, n):
        rows.append(
            {
                "problem_id": problem.id,
                "question": problem.question,
                "gold": problem.gold_answer.to_dict(),
                "core_out": trace.core_out,
                "info_out": trace.info_out,
                "solve_out": trace.solve_out,
                "predicted": trace.predicted.to_dict() if trace.predicted else None,
                "failure": trace.failure.value if trace.failure else None,
                "labels": [],
                "annotator": "",
                "note": "",
            }
        )
    return rows


@dataclass(frozen=True)
class ErrorAnnotation:
    """Multi-label error tags attached to one failed trace."""

    problem_id: str
    labels: frozenset[str]
    annotator: str = ""
    note: str = ""

    def __post_init__(self) -> None:
        if not self.labels:
            raise InvalidLabel(f"annotation for {self.problem_id!r} has no labels")
        bad = set(self.labels) - set(ERROR_LABELS)
        if bad:
            raise InvalidLabel(f"unknown labels {sorted(bad)}; valid: {ERROR_LABELS}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "labels": sorted(self.labels),
            "annotator": self.annotator,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "ErrorAnnotation":
        known = {"problem_id", "labels", "annotator", "note"}
        extra = set(data) - known
        if strict and extra:
            raise InvalidLabel(f"unknown annotation fields: {sorted(extra)}")
        return cls(
            problem_id=str(data["problem_id"]),
            labels=frozenset(data["labels"]),
            annotator=str(data.get("annotator", "")),
            note=str(data.get("note", "")),
        )


@dataclass(frozen=True)
class ErrorAggregate:
    understanding: int
    calculation: int
    step_missing: int

    @property
    def total(self) -> int:
        return self.understanding + self.calculation + self.step_missing

    def to_dict(self) -> dict[str, int]:
        return {
            "understanding": self.understanding,
            "calculation": self.calculation,
            "step_missing": self.step_missing,
            "total": self.total,
        }


def aggregate_errors(annotations: Sequence[ErrorAnnotation]) -> ErrorAggregate:
    """Count each label once per annotation; total may exceed the trace count."""
    counts = Counter()
    for annotation in annotations:
        for label in annotation.labels:
            counts[label] += 1
    return ErrorAggregate(
        understanding=counts.get("understanding", 0),
        calculation=counts.get("calculation", 0),
        step_missing=counts.get("step_missing", 0),
    )


def auto_flag_calculation_errors(
    traces: Sequence[InferenceTrace], tol=DEFAULT_TOLERANCE
) -> list[bool]:
    """Advisory flags: True where the rationale contains a failed arithmetic step."""
    return [
        any(not check.ok for check in verify_arithmetic_steps(trace.solve_out, tol))
        for trace in traces
    ]
