from __future__ import annotations

import json
from pathlib import Path

import pytest

SOLVE_PROMPT = (
    "Let's understand the core question and the problem-solving information, "
    "solve the question step by step, and show the answer."
)


def make_subset_rows(n: int, role: str = "solve") -> list[dict]:
    """Fixture rows in the exported subset schema (the producer contract)."""
    rows = []
    for i in range(n):
        a, b = 2 + i, 3 + (i % 5)
        question = f"A crate holds {a} jars and there are {b} crates. How many jars?"
        rows.append(
            {
                "input": (
                    f"Question: {question}\n"
                    f"Core question: How many jars are there in total?\n"
                    f"Problem-solving information: {a} jars per crate ; {b} crates.\n"
                    f"{SOLVE_PROMPT}"
                ),
                "target": f"There are {a} * {b} = {a * b} jars. The answer is {a * b}.",
                "role": role,
                "problem_id": f"fx-{i:03d}",
                "path_index": 0,
            }
        )
    return rows


def write_subset(path: Path, rows: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


@pytest.fixture
def solve_subset_32(tmp_path) -> Path:
    return write_subset(tmp_path / "solve.jsonl", make_subset_rows(32))
