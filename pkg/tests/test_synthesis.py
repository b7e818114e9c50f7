from __future__ import annotations

import pytest

from kpdistill.client import Completion, ReplayStore, SamplingParams
from kpdistill.codec import TagLayout, parse_tagged
from kpdistill.prompts import COT_SYNTHESIS_INSTRUCTION, POT_SYNTHESIS_INSTRUCTION
from kpdistill.records import Format, Verdict
from kpdistill.synthesis import (
    EmptyDemonstrations,
    PromptTemplate,
    build_prompt,
    default_demonstrations,
    synthesize,
)

from helpers import build_fixture_store, replay_client


@pytest.fixture(scope="module")
def cot_template():
    return PromptTemplate(format=Format.COT, demonstrations=default_demonstrations(Format.COT))


class TestBuildPrompt:
    def test_layout(self, cot_template):
        prompt = build_prompt(cot_template, "How many pears?")
        assert prompt.startswith(COT_SYNTHESIS_INSTRUCTION + "\n\n")
        assert prompt.count("Question: ") == 9  # 8 demos + the target
        assert prompt.rstrip().endswith("How many pears?")
        # each demo block carries a parseable tagged record
        layout = TagLayout.for_format(Format.COT)
        blocks = prompt.split("\n\n")[1:-1]
        assert len(blocks) == 8
        for block in blocks:
            parts = parse_tagged(block, layout)
            assert parts.core and parts.info and parts.rationale

    def test_pot_instruction(self):
        template = PromptTemplate(
            format=Format.POT, demonstrations=default_demonstrations(Format.POT)
        )
        prompt = build_prompt(template, "Q")
        assert prompt.startswith(POT_SYNTHESIS_INSTRUCTION)
        assert "<pot>" in prompt

    def test_deterministic(self, cot_template):
        assert build_prompt(cot_template, "Q") == build_prompt(cot_template, "Q")

    def test_zero_demos(self):
        template = PromptTemplate(format=Format.COT, demonstrations=())
        with pytest.raises(EmptyDemonstrations):
            build_prompt(template, "Q")
        lenient = build_prompt(template, "Q", strict=False)
        assert lenient == COT_SYNTHESIS_INSTRUCTION + "\n\nQuestion: Q\n"

    def test_mixed_format_demos_rejected(self):
        cot_demos = default_demonstrations(Format.COT)
        with pytest.raises(ValueError):
            PromptTemplate(format=Format.POT, demonstrations=cot_demos)


class TestSynthesize:
    def test_single_problem_single_path(self, tmp_path, problems_25, cot_template):
        problem = problems_25[0]
        store_path = tmp_path / "store.jsonl"
        build_fixture_store([problem], Format.COT, store_path, n_paths=1, defects={})
        records = synthesize(
            [problem], cot_template, SamplingParams(n_paths=1), replay_client(store_path)
        )
        assert len(records) == 1
        assert records[0].verdict is Verdict.UNFILTERED
        assert records[0].problem_id == problem.id
        assert records[0].core and records[0].info and records[0].rationale

    def test_malformed_path_recorded_not_dropped(self, tmp_path, problems_25, cot_template):
        problems = problems_25[:2]
        store_path = tmp_path / "store.jsonl"
        build_fixture_store(
            problems,
            Format.COT,
            store_path,
            n_paths=2,
            defects={(problems[1].id, 1): "malformed"},
        )
        records = synthesize(
            problems, cot_template, SamplingParams(n_paths=2), replay_client(store_path)
        )
        assert len(records) == 4
        dropped = [r for r in records if r.verdict is Verdict.DROPPED_UNPARSEABLE]
        assert len(dropped) == 1
        assert dropped[0].problem_id == problems[1].id
        assert dropped[0].path_index == 1
        assert "<core>" in dropped[0].rationale  # raw text preserved for forensics

    def test_count_and_unique_pairs(self, problems_25, cot_template, cot_store_path):
        records = synthesize(
            problems_25, cot_template, SamplingParams(n_paths=4), replay_client(cot_store_path)
        )
        assert len(records) == len(problems_25) * 4 == 100
        pairs = {(r.problem_id, r.path_index) for r in records}
        assert len(pairs) == 100

    def test_output_order(self, problems_25, cot_template, cot_store_path):
        records = synthesize(
            problems_25, cot_template, SamplingParams(n_paths=4), replay_client(cot_store_path)
        )
        expected = [(p.id, i) for p in problems_25 for i in range(4)]
        assert [(r.problem_id, r.path_index) for r in records] == expected

    def test_replay_determinism(self, problems_25, cot_template, cot_store_path):
        runs = [
            synthesize(
                problems_25,
                cot_template,
                SamplingParams(n_paths=4),
                replay_client(cot_store_path, max_in_flight=flight),
            )
            for flight in (1, 4)
        ]
        assert [r.to_dict() for r in runs[0]] == [r.to_dict() for r in runs[1]]

    def test_demo_questions_excluded(self, tmp_path, problems_25, cot_template):
        demo_question = cot_template.demonstrations[0].question
        from decimal import Decimal

        from kpdistill.records import MathProblem, NumericAnswer

        overlap = MathProblem(
            id="overlap",
            question=demo_question,
            gold_answer=NumericAnswer(Decimal(1), "1"),
        )
        store_path = tmp_path / "store.jsonl"
        build_fixture_store(problems_25[:1], Format.COT, store_path, n_paths=1, defects={})
        records = synthesize(
            [problems_25[0], overlap],
            cot_template,
            SamplingParams(n_paths=1),
            replay_client(store_path),
        )
        assert [r.problem_id for r in records] == [problems_25[0].id]

    def test_empty_dataset_rejected(self, cot_template, cot_store_path):
        with pytest.raises(ValueError):
            synthesize([], cot_template, SamplingParams(), replay_client(cot_store_path))
