"""Builds the three role-specific fine-tuning subsets and dataset statistics."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .errors import PipelineError
from .prompts import RolePrompts, build_core_input, build_info_input, build_solve_input
from .records import (
    MathProblem,
    ReasoningRecord,
    Role,
    SubsetExample,
    Verdict,
    read_jsonl,
    write_jsonl,
)


class EmptySegment(PipelineError):
    pass


class IoFailure(PipelineError):
    pass


@dataclass(frozen=True)
class SubsetBundle:
    """The three parallel fine-tuning subsets; one example per role per record."""

    core: tuple[SubsetExample, ...]
    info: tuple[SubsetExample, ...]
    solve: tuple[SubsetExample, ...]

    def by_role(self, role: Role) -> tuple[SubsetExample, ...]:
        return {Role.CORE: self.core, Role.INFO: self.info, Role.SOLVE: self.solve}[role]


def build_subsets(
    kept_records: Sequence[ReasoningRecord],
    problems: Sequence[MathProblem],
    prompts: Optional[RolePrompts] = None,
) -> SubsetBundle:
    """Emit (core, info, solve) examples for every kept record, in input order."""
    prompts = prompts or RolePrompts()
    questions = {p.id: p.question for p in problems}
    core_examples, info_examples, solve_examples = [], [], []
    for record in kept_records:
        if record.verdict is not Verdict.KEPT:
            raise ValueError(
                f"build_subsets requires kept records, got {record.verdict.value} "
                f"for {record.problem_id!r}/{record.path_index}"
            )
        for name in ("core", "info", "rationale"):
            if not getattr(record, name).strip():
                raise EmptySegment(
                    f"kept record {record.problem_id!r}/{record.path_index} has empty {name}"
                )
        if record.problem_id not in questions:
            raise PipelineError(f"record references unknown problem {record.problem_id!r}")
        question = questions[record.problem_id]
        key = {"problem_id": record.problem_id, "path_index": record.path_index}
        core_examples.append(
            SubsetExample(
                role=Role.CORE,
                input=build_core_input(question, prompts),
                target=record.core,
                **key,
            )
        )
        info_examples.append(
            SubsetExample(
                role=Role.INFO,
                input=build_info_input(question, prompts),
                target=record.info,
                **key,
            )
        )
        solve_examples.append(
            SubsetExample(
                role=Role.SOLVE,
                input=build_solve_input(question, record.core, record.info, record.format, prompts),
                target=record.rationale,
                **key,
            )
        )
    return SubsetBundle(
        core=tuple(core_examples), info=tuple(info_examples), solve=tuple(solve_examples)
    )


def export_split(
    subset: Sequence[SubsetExample],
    path: str | Path,
    manifest_extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """Write one JSONL file plus a sidecar manifest; deterministic bytes."""
    path = Path(path)
    try:
        write_jsonl(path, subset)
        manifest = {
            "file": path.name,
            "count": len(subset),
            "roles": dict(Counter(e.role.value for e in subset)),
        }
        if manifest_extra:
            manifest.update(manifest_extra)
        manifest_path = path.with_name(path.name + ".manifest.json")
        manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"failed to export subset to {path}: {exc}") from exc
    return path


def load_split(path: str | Path) -> list[SubsetExample]:
    return list(read_jsonl(path, SubsetExample.from_dict))


@dataclass(frozen=True)
class StatsReport:
    """Synthesis/filter statistics over one corpus."""

    raw_count: int
    kept_count: int
    keep_rate: float
    paths_per_question: int
    kept_path_histogram: Mapping[int, int] = field(default_factory=dict)
    drop_reasons: Mapping[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw_count": self.raw_count,
            "kept_count": self.kept_count,
            "keep_rate": self.keep_rate,
            "paths_per_question": self.paths_per_question,
            "kept_path_histogram": {str(k): v for k, v in sorted(self.kept_path_histogram.items())},
            "drop_reasons": dict(sorted(self.drop_reasons.items())),
        }


def stats(
    raw_records: Sequence[ReasoningRecord],
    filtered_records: Sequence[ReasoningRecord],
) -> StatsReport:
    """Summarize keep rate, per-question kept-path histogram, and drop reasons."""
    raw_by_problem: Counter[str] = Counter(r.problem_id for r in raw_records)
    kept_by_problem: Counter[str] = Counter(
        r.problem_id for r in filtered_records if r.verdict is Verdict.KEPT
    )
    k = max((r.path_index for r in raw_records), default=-1) + 1
    histogram = Counter(kept_by_problem.get(pid, 0) for pid in raw_by_problem)
    drops = Counter(
        r.verdict.value
        for r in filtered_records
        if r.verdict not in (Verdict.KEPT, Verdict.UNFILTERED)
    )
    kept_count = sum(kept_by_problem.values())
    raw_count = len(raw_records)
    return StatsReport(
        raw_count=raw_count,
        kept_count=kept_count,
        keep_rate=kept_count / raw_count if raw_count else 0.0,
        paths_per_question=k,
        kept_path_histogram=dict(histogram),
        drop_reasons=dict(drops),
    )
