from __future__ import annotations

import random
from decimal import Decimal

import pytest

from kpdistill import evaluation as ev
from kpdistill.records import (
    FailureMode,
    InferenceTrace,
    MathProblem,
    NumericAnswer,
    Source,
    read_jsonl,
)


def trace(pid, predicted=None, failure=None, solve_out="text"):
    return InferenceTrace(
        problem_id=pid,
        topology_id="t",
        solve_out=solve_out,
        predicted=predicted,
        failure=failure,
    )


def answer(value):
    return NumericAnswer(Decimal(str(value)), str(value))


class TestIngestion:
    def test_gsm8k(self, fixtures_dir):
        problems = ev.ingest_benchmark(fixtures_dir / "bench/gsm8k_sample.jsonl", "gsm8k")
        assert [p.gold_answer.value for p in problems] == [Decimal(18), Decimal(75), Decimal(24)]
        assert all(p.source is Source.GSM8K for p in problems)
        assert problems[0].id == "gsm8k-1"

    def test_asdiv_skips_non_numeric(self, fixtures_dir, caplog):
        with caplog.at_level("INFO"):
            problems = ev.ingest_benchmark(fixtures_dir / "bench/asdiv_sample.xml", "asdiv")
        assert [p.id for p in problems] == ["asdiv-a1", "asdiv-a2", "asdiv-a4"]
        assert [p.gold_answer.value for p in problems] == [Decimal(21), Decimal(8), Decimal(30)]
        assert "skipped 1" in caplog.text
        assert problems[0].question.startswith("Seven kids each bring 3 balloons")
        assert problems[0].question.endswith("How many balloons do they bring in all?")

    def test_svamp(self, fixtures_dir):
        problems = ev.ingest_benchmark(fixtures_dir / "bench/svamp_sample.json", "svamp")
        assert [p.gold_answer.value for p in problems] == [Decimal(13), Decimal(60), Decimal(54)]
        assert problems[0].source is Source.SVAMP

    def test_multiarith(self, fixtures_dir):
        problems = ev.ingest_benchmark(fixtures_dir / "bench/multiarith_sample.json", "multiarith")
        assert [p.gold_answer.value for p in problems] == [Decimal(62), Decimal(6), Decimal(7)]
        assert problems[0].id == "multiarith-1"

    def test_generic(self, fixtures_dir):
        problems = ev.ingest_benchmark(fixtures_dir / "bench/generic_sample.jsonl", "generic_jsonl")
        assert [p.gold_answer.value for p in problems] == [Decimal(42), Decimal(42)]

    def test_generic_missing_gold_is_malformed(self, fixtures_dir):
        with pytest.raises(ev.MalformedRecord, match=":2:"):
            ev.ingest_benchmark(
                fixtures_dir / "bench/generic_missing_gold.jsonl", "generic_jsonl"
            )

    def test_unknown_adapter(self, fixtures_dir):
        with pytest.raises(ev.UnknownAdapter):
            ev.ingest_benchmark(fixtures_dir / "bench/generic_sample.jsonl", "mystery")

    def test_lossless_round_trip(self, fixtures_dir, tmp_path):
        problems = ev.ingest_benchmark(fixtures_dir / "bench/svamp_sample.json", "svamp")
        from kpdistill.records import write_jsonl

        path = tmp_path / "problems.jsonl"
        write_jsonl(path, problems)
        assert list(read_jsonl(path, MathProblem.from_dict)) == problems


class TestScore:
    def _problems(self):
        return [
            MathProblem(id=f"p{i}", question=f"q{i}?", gold_answer=answer(i), source=Source.GSM8K)
            for i in range(4)
        ]

    def test_half_correct(self):
        problems = self._problems()
        traces = [
            trace("p0", predicted=answer(0)),
            trace("p1", predicted=answer(1)),
            trace("p2", predicted=answer(99)),
            trace("p3", failure=FailureMode.NO_ANSWER_FOUND),
        ]
        report = ev.score(traces, problems)
        assert report.n == 4 and report.correct == 2
        assert report.accuracy == 0.5

    def test_all_failed(self):
        problems = self._problems()
        traces = [trace(f"p{i}", failure=FailureMode.EXEC_ERROR) for i in range(4)]
        report = ev.score(traces, problems)
        assert report.accuracy == 0.0
        assert sum(report.failure_counts.values()) == report.n

    def test_reorder_invariant(self):
        problems = self._problems()
        traces = [
            trace("p0", predicted=answer(0)),
            trace("p1", predicted=answer(5)),
            trace("p2", predicted=answer(2)),
            trace("p3", failure=FailureMode.ENDPOINT_ERROR),
        ]
        report_a = ev.score(traces, problems)
        shuffled = list(traces)
        random.Random(5).shuffle(shuffled)
        report_b = ev.score(shuffled, problems)
        assert report_a.to_dict() == report_b.to_dict()

    def test_macro_average_unweighted(self):
        problems = [
            MathProblem(id="g1", question="q?", gold_answer=answer(1), source=Source.GSM8K),
            MathProblem(id="g2", question="q?", gold_answer=answer(2), source=Source.GSM8K),
            MathProblem(id="s1", question="q?", gold_answer=answer(3), source=Source.SVAMP),
        ]
        traces = [
            trace("g1", predicted=answer(1)),
            trace("g2", predicted=answer(0)),
            trace("s1", predicted=answer(3)),
        ]
        report = ev.score(traces, problems)
        assert report.per_dataset["gsm8k"].accuracy == 0.5
        assert report.per_dataset["svamp"].accuracy == 1.0
        assert report.macro_average == 0.75

    def test_unknown_problem(self):
        with pytest.raises(ev.UnknownProblemId):
            ev.score([trace("ghost", predicted=answer(1))], self._problems())

    def test_hand_keyed_fixture(self, fixtures_dir, problems_20):
        traces = list(read_jsonl(fixtures_dir / "traces_20.jsonl", InferenceTrace.from_dict))
        report = ev.score(traces, problems_20)
        assert report.n == 20
        assert report.correct == 11
        assert report.accuracy == 0.55
        assert report.failure_counts == {
            "no_answer_found": 2,
            "exec_error": 1,
            "endpoint_error": 1,
        }


class TestSampleForAnalysis:
    def _setup(self, n_traces=60):
        problems = [
            MathProblem(id=f"p{i}", question=f"q{i}?", gold_answer=answer(i))
            for i in range(n_traces)
        ]
        traces = [trace(f"p{i}", predicted=answer(i + 1)) for i in range(n_traces)]
        return traces, problems

    def test_reproducible(self):
        traces, problems = self._setup()
        rows_a = ev.sample_for_analysis(traces, problems, 50, seed=7)
        rows_b = ev.sample_for_analysis(traces, problems, 50, seed=7)
        assert rows_a == rows_b
        assert len(rows_a) == 50
        assert all(row["labels"] == [] for row in rows_a)

    def test_different_seeds_differ(self):
        traces, problems = self._setup()
        ids_a = {r["problem_id"] for r in ev.sample_for_analysis(traces, problems, 30, seed=1)}
        ids_b = {r["problem_id"] for r in ev.sample_for_analysis(traces, problems, 30, seed=2)}
        assert ids_a != ids_b

    def test_not_enough(self):
        traces, problems = self._setup(10)
        with pytest.raises(ev.NotEnoughTraces):
            ev.sample_for_analysis(traces, problems, 11, seed=0)

    def test_correct_traces_excluded(self):
        problems = [MathProblem(id="p0", question="q?", gold_answer=answer(5))]
        correct = [trace("p0", predicted=answer(5))]
        with pytest.raises(ev.NotEnoughTraces):
            ev.sample_for_analysis(correct, problems, 1, seed=0)


class TestAggregateErrors:
    def test_published_tally_fixture(self, fixtures_dir):
        annotations = list(
            read_jsonl(fixtures_dir / "annotations_cotd_gsm8k.jsonl", ev.ErrorAnnotation.from_dict)
        )
        aggregate = ev.aggregate_errors(annotations)
        assert aggregate.understanding == 51
        assert aggregate.calculation == 79
        assert aggregate.step_missing == 34
        assert aggregate.total == 164

    def test_multi_label_counts_once_per_label(self):
        annotation = ev.ErrorAnnotation(
            problem_id="x", labels=frozenset({"understanding", "calculation"})
        )
        aggregate = ev.aggregate_errors([annotation])
        assert aggregate.understanding == 1 and aggregate.calculation == 1
        assert aggregate.total == 2

    def test_empty(self):
        assert ev.aggregate_errors([]).total == 0

    def test_single_label_total_equals_count(self):
        annotations = [
            ev.ErrorAnnotation(problem_id=f"p{i}", labels=frozenset({"calculation"}))
            for i in range(7)
        ]
        assert ev.aggregate_errors(annotations).total == 7

    def test_invalid_label(self):
        with pytest.raises(ev.InvalidLabel):
            ev.ErrorAnnotation(problem_id="x", labels=frozenset({"hallucination"}))
        with pytest.raises(ev.InvalidLabel):
            ev.ErrorAnnotation(problem_id="x", labels=frozenset())


class TestAutoFlag:
    def test_planted_bad_steps(self):
        good = "First 10 / 2 = 5 and then 5 + 1 = 6. The answer is 6."
        bad = "First 10 / 2 = 6 and then 6 + 1 = 7. The answer is 7."
        traces = [trace(f"p{i}", predicted=answer(1), solve_out=good) for i in range(7)]
        traces += [trace(f"b{i}", predicted=answer(1), solve_out=bad) for i in range(3)]
        flags = ev.auto_flag_calculation_errors(traces)
        assert flags.count(True) == 3
        assert flags == [False] * 7 + [True] * 3

    def test_flag_examples(self):
        flagged = ev.auto_flag_calculation_errors([trace("a", predicted=answer(1), solve_out="5 + 7 = 13")])
        assert flagged == [True]
        clean = ev.auto_flag_calculation_errors(
            [trace("a", predicted=answer(1), solve_out="5 + 7 = 12 then 12 - 2 = 10")]
        )
        assert clean == [False]
