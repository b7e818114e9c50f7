"""Few-shot prompt construction and teacher-driven data synthesis."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence

from .client import SamplingParams, TeacherClient
from .codec import TagError, TagLayout, parse_tagged, serialize_tagged
from .errors import PipelineError
from .prompts import synthesis_instruction
from .records import Demonstration, Format, MathProblem, ReasoningRecord, Verdict, read_jsonl


class EmptyDemonstrations(PipelineError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    """Instruction plus ordered demonstrations for one reasoning format."""

    format: Format
    demonstrations: tuple[Demonstration, ...]
    instruction: str = ""

    def __post_init__(self) -> None:
        if not self.instruction:
            object.__setattr__(self, "instruction", synthesis_instruction(self.format))
        for demo in self.demonstrations:
            if demo.record.format is not self.format:
                raise ValueError(
                    f"demonstration format {demo.record.format.value} does not match "
                    f"template format {self.format.value}"
                )


def default_demonstrations(fmt: Format) -> tuple[Demonstration, ...]:
    """The eight shipped hand-written demonstrations for a format."""
    name = "demos_cot.jsonl" if fmt is Format.COT else "demos_pot.jsonl"
    path = resources.files("kpdistill").joinpath("data").joinpath(name)
    with resources.as_file(path) as fs_path:
        return tuple(read_jsonl(fs_path, Demonstration.from_dict))


def load_demonstrations(path) -> tuple[Demonstration, ...]:
    return tuple(read_jsonl(path, Demonstration.from_dict))


def build_prompt(template: PromptTemplate, question: str, strict: bool = True) -> str:
    """Render instruction, demonstration blocks, then the target question."""
    if strict and not template.demonstrations:
        raise EmptyDemonstrations("template has no demonstrations")
    layout = TagLayout.for_format(template.format)
    blocks = [template.instruction, "\n\n"]
    for demo in template.demonstrations:
        rendered = serialize_tagged(
            demo.record.core, demo.record.info, demo.record.rationale, layout
        )
        blocks.append(f"Question: {demo.question}\n{rendered}\n\n")
    blocks.append(f"Question: {question}\n")
    return "".join(blocks)


def synthesize(
    problems: Sequence[MathProblem],
    template: PromptTemplate,
    params: SamplingParams,
    client: TeacherClient,
    exclude_demo_questions: bool = True,
    max_workers: Optional[int] = None,
) -> list[ReasoningRecord]:
    """Generate n_paths reasoning records per problem.

    Unparseable completions become records with verdict dropped_unparseable
    (raw text preserved in the rationale field), so the output count is
    always len(problems) * n_paths. Only endpoint failures abort.
    """
    if not problems:
        raise ValueError("dataset must be non-empty")
    demo_questions = {d.question for d in template.demonstrations}
    if exclude_demo_questions:
        problems = [p for p in problems if p.question not in demo_questions]
    layout = TagLayout.for_format(template.format)
    meta = {
        "params": params.to_dict(),
        "model": client.cfg.model_name,
        "backend": client.backend,
    }

    def run_one(problem: MathProblem) -> list[ReasoningRecord]:
        prompt = build_prompt(template, problem.question)
        completions = client.complete(prompt, params)
        records = []
        for path_index, completion in enumerate(completions):
            path_meta = dict(meta)
            if completion.truncated:
                path_meta["truncated"] = True
            try:
                parts = parse_tagged(completion.text, layout)
                record = ReasoningRecord(
                    problem_id=problem.id,
                    format=template.format,
                    core=parts.core,
                    info=parts.info,
                    rationale=parts.rationale,
                    path_index=path_index,
                    teacher_meta=path_meta,
                    verdict=Verdict.UNFILTERED,
                )
            except TagError as exc:
                path_meta["parse_error"] = type(exc).__name__
                record = ReasoningRecord(
                    problem_id=problem.id,
                    format=template.format,
                    core="",
                    info="",
                    rationale=completion.text,
                    path_index=path_index,
                    teacher_meta=path_meta,
                    verdict=Verdict.DROPPED_UNPARSEABLE,
                )
            records.append(record)
        return records

    workers = max_workers or client.cfg.max_in_flight
    with ThreadPoolExecutor(max_workers=workers) as pool:
        per_problem = list(pool.map(run_one, problems))
    return [record for records in per_problem for record in records]
