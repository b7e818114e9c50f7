"""Domain types shared by every pipeline stage.

All types are immutable value objects; the canonical on-disk form of each is
one JSON object per line with snake_case field names. Unknown fields are
rejected in strict mode and ignored in lenient mode.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Optional

from .errors import PipelineError


class SchemaError(PipelineError):
    """A record does not conform to the canonical serialization."""


class Source(enum.Enum):
    GSM8K = "gsm8k"
    ASDIV = "asdiv"
    SVAMP = "svamp"
    MULTIARITH = "multiarith"
    CUSTOM = "custom"


class Format(enum.Enum):
    COT = "cot"
    POT = "pot"


class Verdict(enum.Enum):
    UNFILTERED = "unfiltered"
    KEPT = "kept"
    DROPPED_WRONG_ANSWER = "dropped_wrong_answer"
    DROPPED_UNPARSEABLE = "dropped_unparseable"
    DROPPED_EXEC_ERROR = "dropped_exec_error"
    DROPPED_TIMEOUT = "dropped_timeout"


class Role(enum.Enum):
    CORE = "core"
    INFO = "info"
    SOLVE = "solve"


class FailureMode(enum.Enum):
    NO_ANSWER_FOUND = "no_answer_found"
    EXEC_ERROR = "exec_error"
    EXEC_TIMEOUT = "exec_timeout"
    ENDPOINT_ERROR = "endpoint_error"


@dataclass(frozen=True)
class NumericAnswer:
    """An exact decimal answer value plus the text fragment it came from."""

    value: Decimal
    raw: str

    def __post_init__(self) -> None:
        if not isinstance(self.value, Decimal):
            object.__setattr__(self, "value", Decimal(str(self.value)))
        if not self.value.is_finite():
            raise SchemaError(f"answer value must be finite, got {self.value}")

    def to_dict(self) -> dict[str, str]:
        return {"value": str(self.value), "raw": self.raw}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "NumericAnswer":
        _check_fields(data, {"value", "raw"}, {"value", "raw"}, strict, "NumericAnswer")
        try:
            value = Decimal(str(data["value"]))
        except InvalidOperation as exc:
            raise SchemaError(f"bad decimal value {data['value']!r}") from exc
        return cls(value=value, raw=str(data["raw"]))


@dataclass(frozen=True)
class MathProblem:
    """One benchmark item: question text plus its gold numeric answer."""

    id: str
    question: str
    gold_answer: NumericAnswer
    source: Source = Source.CUSTOM

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise SchemaError(f"problem {self.id!r} has an empty question")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "question": self.question,
            "gold_answer": self.gold_answer.to_dict(),
            "source": self.source.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "MathProblem":
        required = {"id", "question", "gold_answer"}
        _check_fields(data, required, required | {"source"}, strict, "MathProblem")
        return cls(
            id=str(data["id"]),
            question=str(data["question"]),
            gold_answer=NumericAnswer.from_dict(data["gold_answer"], strict=strict),
            source=Source(data.get("source", "custom")),
        )


@dataclass(frozen=True)
class ReasoningRecord:
    """One teacher-generated reasoning path and its filter verdict."""

    problem_id: str
    format: Format
    core: str
    info: str
    rationale: str
    path_index: int
    teacher_meta: Mapping[str, Any] = field(default_factory=dict)
    verdict: Verdict = Verdict.UNFILTERED

    def __post_init__(self) -> None:
        if self.path_index < 0:
            raise SchemaError(f"path_index must be >= 0, got {self.path_index}")
        if self.verdict is Verdict.KEPT:
            for name in ("core", "info", "rationale"):
                if not getattr(self, name).strip():
                    raise SchemaError(
                        f"kept record {self.problem_id!r}/{self.path_index} has empty {name}"
                    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "format": self.format.value,
            "core": self.core,
            "info": self.info,
            "rationale": self.rationale,
            "path_index": self.path_index,
            "teacher_meta": dict(self.teacher_meta),
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "ReasoningRecord":
        required = {"problem_id", "format", "core", "info", "rationale", "path_index"}
        allowed = required | {"teacher_meta", "verdict"}
        _check_fields(data, required, allowed, strict, "ReasoningRecord")
        return cls(
            problem_id=str(data["problem_id"]),
            format=Format(data["format"]),
            core=str(data["core"]),
            info=str(data["info"]),
            rationale=str(data["rationale"]),
            path_index=int(data["path_index"]),
            teacher_meta=dict(data.get("teacher_meta", {})),
            verdict=Verdict(data.get("verdict", "unfiltered")),
        )


@dataclass(frozen=True)
class Demonstration:
    """A hand-written exemplar: question plus its kept reasoning record."""

    question: str
    record: ReasoningRecord

    def __post_init__(self) -> None:
        if self.record.verdict is not Verdict.KEPT:
            raise SchemaError("demonstration records must carry verdict=kept")

    def to_dict(self) -> dict[str, Any]:
        return {"question": self.question, "record": self.record.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "Demonstration":
        _check_fields(data, {"question", "record"}, {"question", "record"}, strict, "Demonstration")
        return cls(
            question=str(data["question"]),
            record=ReasoningRecord.from_dict(data["record"], strict=strict),
        )


@dataclass(frozen=True)
class SubsetExample:
    """One fine-tuning example for exactly one student role."""

    role: Role
    input: str
    target: str
    problem_id: str
    path_index: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "input": self.input,
            "target": self.target,
            "problem_id": self.problem_id,
            "path_index": self.path_index,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "SubsetExample":
        required = {"role", "input", "target", "problem_id", "path_index"}
        _check_fields(data, required, required, strict, "SubsetExample")
        return cls(
            role=Role(data["role"]),
            input=str(data["input"]),
            target=str(data["target"]),
            problem_id=str(data["problem_id"]),
            path_index=int(data["path_index"]),
        )


@dataclass(frozen=True)
class InferenceTrace:
    """Per-question record of the staged prediction.

    Exactly one of ``predicted`` / ``failure`` is present. Stage outputs are
    present iff the topology enabled that stage.
    """

    problem_id: str
    topology_id: str
    solve_out: str
    core_out: Optional[str] = None
    info_out: Optional[str] = None
    predicted: Optional[NumericAnswer] = None
    failure: Optional[FailureMode] = None
    stage_latencies: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.predicted is None) == (self.failure is None):
            raise SchemaError(
                f"trace {self.problem_id!r} must carry exactly one of predicted/failure"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "topology_id": self.topology_id,
            "core_out": self.core_out,
            "info_out": self.info_out,
            "solve_out": self.solve_out,
            "predicted": self.predicted.to_dict() if self.predicted else None,
            "failure": self.failure.value if self.failure else None,
            "stage_latencies": dict(self.stage_latencies),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], strict: bool = True) -> "InferenceTrace":
        required = {"problem_id", "topology_id", "solve_out"}
        allowed = required | {"core_out", "info_out", "predicted", "failure", "stage_latencies"}
        _check_fields(data, required, allowed, strict, "InferenceTrace")
        predicted = data.get("predicted")
        failure = data.get("failure")
        return cls(
            problem_id=str(data["problem_id"]),
            topology_id=str(data["topology_id"]),
            core_out=data.get("core_out"),
            info_out=data.get("info_out"),
            solve_out=str(data["solve_out"]),
            predicted=NumericAnswer.from_dict(predicted, strict=strict) if predicted else None,
            failure=FailureMode(failure) if failure else None,
            stage_latencies=dict(data.get("stage_latencies", {})),
        )


def _check_fields(
    data: Mapping[str, Any],
    required: set[str],
    allowed: set[str],
    strict: bool,
    type_name: str,
) -> None:
    missing = required - set(data)
    if missing:
        raise SchemaError(f"{type_name} record missing fields: {sorted(missing)}")
    if strict:
        unknown = set(data) - allowed
        if unknown:
            raise SchemaError(f"{type_name} record has unknown fields: {sorted(unknown)}")


def write_jsonl(path: str | Path, items: Iterable[Any]) -> int:
    """Write ``item.to_dict()`` for each item, one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item.to_dict(), ensure_ascii=False, sort_keys=True))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(
    path: str | Path,
    from_dict: Callable[[Mapping[str, Any]], Any],
    strict: bool = True,
) -> Iterator[Any]:
    """Yield parsed records from a line-delimited JSON file."""
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            yield from_dict(data, strict=strict)
