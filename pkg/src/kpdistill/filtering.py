"""Correctness filters: answer matching for CoT, sandboxed execution for PoT.

Filters assign verdicts without mutating rationale text and preserve input
order. Records that arrived already dropped (unparseable synthesis output)
keep their verdict.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from decimal import Decimal
from typing import Optional, Sequence

from .codec import DEFAULT_TOLERANCE, NoAnswerFound, answers_match, extract_final_answer
from .errors import PipelineError
from .records import Format, MathProblem, NumericAnswer, ReasoningRecord, Verdict
from .sandbox import ExecLimits, ExecStatus, execute_program


class UnknownProblemId(PipelineError):
    pass


def _gold_map(problems: Sequence[MathProblem]) -> dict[str, NumericAnswer]:
    return {p.id: p.gold_answer for p in problems}


def _resolve_gold(record: ReasoningRecord, gold: dict[str, NumericAnswer]) -> NumericAnswer:
    try:
        return gold[record.problem_id]
    except KeyError:
        raise UnknownProblemId(f"record references unknown problem {record.problem_id!r}")


def filter_cot(
    records: Sequence[ReasoningRecord],
    problems: Sequence[MathProblem],
    tol: Decimal = DEFAULT_TOLERANCE,
) -> list[ReasoningRecord]:
    """Keep records whose extracted final answer matches the gold answer."""
    gold = _gold_map(problems)
    out = []
    for record in records:
        if record.format is not Format.COT:
            raise ValueError(f"filter_cot got a {record.format.value} record")
        target = _resolve_gold(record, gold)
        if record.verdict is not Verdict.UNFILTERED:
            out.append(record)
            continue
        try:
            extracted = extract_final_answer(record.rationale)
        except NoAnswerFound:
            out.append(replace(record, verdict=Verdict.DROPPED_UNPARSEABLE))
            continue
        verdict = (
            Verdict.KEPT if answers_match(extracted, target, tol) else Verdict.DROPPED_WRONG_ANSWER
        )
        out.append(replace(record, verdict=verdict))
    return out


_STATUS_VERDICT = {
    ExecStatus.TIMEOUT: Verdict.DROPPED_TIMEOUT,
    ExecStatus.EXCEPTION: Verdict.DROPPED_EXEC_ERROR,
    ExecStatus.RESOURCE_KILL: Verdict.DROPPED_EXEC_ERROR,
    ExecStatus.NO_ANS_VARIABLE: Verdict.DROPPED_EXEC_ERROR,
}


def filter_pot(
    records: Sequence[ReasoningRecord],
    problems: Sequence[MathProblem],
    limits: Optional[ExecLimits] = None,
    tol: Decimal = DEFAULT_TOLERANCE,
    max_workers: Optional[int] = None,
) -> list[ReasoningRecord]:
    """Keep records whose executed program produces the gold answer.

    Executions run in a bounded worker pool; results are reassembled in input
    order. SandboxSpawnFailure aborts the whole batch (environment fault).
    """
    limits = limits or ExecLimits()
    gold = _gold_map(problems)
    for record in records:
        if record.format is not Format.POT:
            raise ValueError(f"filter_pot got a {record.format.value} record")
        _resolve_gold(record, gold)

    def judge(record: ReasoningRecord) -> ReasoningRecord:
        if record.verdict is not Verdict.UNFILTERED:
            return record
        result = execute_program(record.rationale, limits)
        if result.status is ExecStatus.OK:
            assert result.ans is not None
            matched = answers_match(result.ans, gold[record.problem_id], tol)
            verdict = Verdict.KEPT if matched else Verdict.DROPPED_WRONG_ANSWER
        else:
            verdict = _STATUS_VERDICT[result.status]
        return replace(record, verdict=verdict)

    workers = max_workers or os.cpu_count() or 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(judge, records))


def keep_rate(records: Sequence[ReasoningRecord]) -> float:
    if not records:
        return 0.0
    kept = sum(1 for r in records if r.verdict is Verdict.KEPT)
    return kept / len(records)
