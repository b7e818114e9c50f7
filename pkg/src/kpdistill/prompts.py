"""Role prompts and the shared input-construction routines.

The solve-stage input layout lives here so that dataset export and staged
inference build byte-identical strings from the same (question, core, info).
"""

from __future__ import annotations

from dataclasses import dataclass

from .records import Format

COT_SYNTHESIS_INSTRUCTION = (
    "Firstly, let's extract the most comprehensive and detailed key question. "
    "Then, let's identify and list the most useful information related to the "
    "question. Finally, let's understand the key question and the problem-solving "
    "information, solve the question step by step, and show the answer."
)

POT_SYNTHESIS_INSTRUCTION = (
    "Firstly, let's extract the most comprehensive and detailed key question. "
    "Then, let's identify and list the most useful information related to the "
    "question. Finally, let's understand the key question and the problem-solving "
    "information, and generate the python code (return ans) to solve the question."
)


@dataclass(frozen=True)
class RolePrompts:
    """Per-role fine-tuning prompts. Defaults are the canonical strings."""

    core: str = "Let's extract the most comprehensive and detailed core question."
    info: str = "Let's identify and list the most useful information related to the question."
    solve_cot: str = (
        "Let's understand the core question and the problem-solving information, "
        "solve the question step by step, and show the answer."
    )
    solve_pot: str = (
        "Let's understand the core question and the problem-solving information, "
        "and generate the python code (return ans) to solve the question."
    )

    def solve(self, fmt: Format) -> str:
        return self.solve_cot if fmt is Format.COT else self.solve_pot


def synthesis_instruction(fmt: Format) -> str:
    return COT_SYNTHESIS_INSTRUCTION if fmt is Format.COT else POT_SYNTHESIS_INSTRUCTION


def build_core_input(question: str, prompts: RolePrompts) -> str:
    return f"{prompts.core}\n{question}"


def build_info_input(question: str, prompts: RolePrompts) -> str:
    return f"{prompts.info}\n{question}"


def build_solve_input(
    question: str,
    core: str | None,
    info: str | None,
    fmt: Format,
    prompts: RolePrompts,
) -> str:
    """Labeled-section solve input; omit the line for any absent component."""
    lines = [f"Question: {question}"]
    if core is not None:
        lines.append(f"Core question: {core}")
    if info is not None:
        lines.append(f"Problem-solving information: {info}")
    lines.append(prompts.solve(fmt))
    return "\n".join(lines)
