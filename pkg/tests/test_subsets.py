from __future__ import annotations

import json
from decimal import Decimal

import pytest

from kpdistill.prompts import RolePrompts
from kpdistill.records import Format, MathProblem, NumericAnswer, ReasoningRecord, Role, Verdict
from kpdistill.subsets import EmptySegment, SubsetBundle, build_subsets, export_split, load_split, stats

PROMPTS = RolePrompts()


def problem(pid="p1", question="Natalia sold 48 clips. How many?"):
    return MathProblem(id=pid, question=question, gold_answer=NumericAnswer(Decimal(72), "72"))


def kept(pid="p1", idx=0, fmt=Format.COT):
    return ReasoningRecord(
        problem_id=pid,
        format=fmt,
        core="How many clips were sold in total?",
        info="48 in April; half as many in May.",
        rationale="April 48, May 24, so 48 + 24 = 72. The answer is 72.",
        path_index=idx,
        verdict=Verdict.KEPT,
    )


class TestBuildSubsets:
    def test_one_record_three_examples(self):
        bundle = build_subsets([kept()], [problem()], PROMPTS)
        assert len(bundle.core) == len(bundle.info) == len(bundle.solve) == 1
        core_example = bundle.core[0]
        assert core_example.input == PROMPTS.core + "\nNatalia sold 48 clips. How many?"
        assert core_example.target == "How many clips were sold in total?"
        info_example = bundle.info[0]
        assert info_example.input.startswith(PROMPTS.info + "\n")
        assert info_example.target == "48 in April; half as many in May."
        solve_example = bundle.solve[0]
        assert "Question: Natalia sold 48 clips. How many?" in solve_example.input
        assert "Core question: How many clips were sold in total?" in solve_example.input
        assert "Problem-solving information: 48 in April; half as many in May." in solve_example.input
        assert solve_example.input.endswith(PROMPTS.solve_cot)
        assert solve_example.target == kept().rationale

    def test_pot_record_gets_pot_solve_prompt(self):
        record = ReasoningRecord(
            problem_id="p1",
            format=Format.POT,
            core="c",
            info="i",
            rationale="ans = 72",
            path_index=0,
            verdict=Verdict.KEPT,
        )
        bundle = build_subsets([record], [problem()], PROMPTS)
        assert bundle.solve[0].input.endswith(PROMPTS.solve_pot)

    def test_zero_records(self):
        bundle = build_subsets([], [problem()], PROMPTS)
        assert bundle.core == bundle.info == bundle.solve == ()

    def test_equal_cardinality_forced(self):
        records = [kept(idx=i) for i in range(5)]
        bundle = build_subsets(records, [problem()], PROMPTS)
        assert len(bundle.core) == len(bundle.info) == len(bundle.solve) == 5

    def test_rejects_unkept(self):
        record = ReasoningRecord(
            problem_id="p1",
            format=Format.COT,
            core="c",
            info="i",
            rationale="r",
            path_index=0,
            verdict=Verdict.UNFILTERED,
        )
        with pytest.raises(ValueError):
            build_subsets([record], [problem()], PROMPTS)

    def test_targets_free_of_markup_and_prompts(self):
        bundle = build_subsets([kept(idx=i) for i in range(3)], [problem()], PROMPTS)
        for subset in (bundle.core, bundle.info, bundle.solve):
            for example in subset:
                for marker in ("<core>", "</core>", "<info>", "</info>", "<cot>", "</cot>"):
                    assert marker not in example.target
                for role_prompt in (PROMPTS.core, PROMPTS.info, PROMPTS.solve_cot):
                    assert role_prompt not in example.target

    def test_exactly_one_role_prompt_in_input(self):
        bundle = build_subsets([kept()], [problem()], PROMPTS)
        all_prompts = [PROMPTS.core, PROMPTS.info, PROMPTS.solve_cot, PROMPTS.solve_pot]
        for subset in (bundle.core, bundle.info, bundle.solve):
            for example in subset:
                assert sum(example.input.count(p) for p in all_prompts) == 1


class TestExportSplit:
    def test_schema_and_manifest(self, tmp_path):
        bundle = build_subsets([kept(idx=i) for i in range(3)], [problem()], PROMPTS)
        path = export_split(bundle.solve, tmp_path / "solve.jsonl", {"config_hash": "abc"})
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 3
        row = json.loads(lines[0])
        assert set(row) == {"input", "target", "role", "problem_id", "path_index"}
        manifest = json.loads((tmp_path / "solve.jsonl.manifest.json").read_text())
        assert manifest["count"] == 3
        assert manifest["config_hash"] == "abc"

    def test_deterministic_bytes(self, tmp_path):
        bundle = build_subsets([kept(idx=i) for i in range(4)], [problem()], PROMPTS)
        a = export_split(bundle.core, tmp_path / "a.jsonl")
        b = export_split(bundle.core, tmp_path / "b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_round_trip(self, tmp_path):
        bundle = build_subsets([kept(idx=i) for i in range(4)], [problem()], PROMPTS)
        path = export_split(bundle.info, tmp_path / "info.jsonl")
        assert tuple(load_split(path)) == bundle.info

    def test_ordering_is_problem_then_path(self, tmp_path):
        records = [kept(pid="p2", idx=0), kept(pid="p2", idx=1), kept(pid="p9", idx=0)]
        problems = [problem("p2"), problem("p9")]
        bundle = build_subsets(records, problems, PROMPTS)
        path = export_split(bundle.core, tmp_path / "core.jsonl")
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert [(r["problem_id"], r["path_index"]) for r in rows] == [
            ("p2", 0),
            ("p2", 1),
            ("p9", 0),
        ]


class TestStats:
    def _records(self, n_problems, k, dropped):
        out = []
        for p in range(n_problems):
            for i in range(k):
                verdict = Verdict.KEPT
                if (f"q{p}", i) in dropped:
                    verdict = dropped[(f"q{p}", i)]
                record = ReasoningRecord(
                    problem_id=f"q{p}",
                    format=Format.COT,
                    core="c",
                    info="i",
                    rationale="r",
                    path_index=i,
                    verdict=verdict,
                )
                out.append(record)
        return out

    def test_all_kept(self):
        records = self._records(3, 4, {})
        report = stats(records, records)
        assert report.raw_count == 12
        assert report.kept_count == 12
        assert report.keep_rate == 1.0
        assert report.kept_path_histogram == {4: 3}
        assert report.drop_reasons == {}

    def test_hand_planted_two_bad_of_eight(self):
        dropped = {
            ("q0", 1): Verdict.DROPPED_WRONG_ANSWER,
            ("q1", 3): Verdict.DROPPED_UNPARSEABLE,
        }
        records = self._records(2, 4, dropped)
        report = stats(records, records)
        assert report.raw_count == 8
        assert report.kept_count == 6
        assert report.keep_rate == 0.75
        assert report.kept_path_histogram == {3: 2}
        assert report.drop_reasons == {"dropped_wrong_answer": 1, "dropped_unparseable": 1}

    def test_zero_kept_question_visible(self):
        dropped = {("q0", i): Verdict.DROPPED_WRONG_ANSWER for i in range(4)}
        records = self._records(2, 4, dropped)
        report = stats(records, records)
        assert report.kept_path_histogram == {0: 1, 4: 1}
