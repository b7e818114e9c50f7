from __future__ import annotations

from pathlib import Path

import pytest

from kpdistill.records import Format, MathProblem, read_jsonl

from helpers import build_fixture_store

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def problems_25() -> list[MathProblem]:
    return list(read_jsonl(FIXTURES / "problems_25.jsonl", MathProblem.from_dict))


@pytest.fixture(scope="session")
def problems_20() -> list[MathProblem]:
    return list(read_jsonl(FIXTURES / "problems_20.jsonl", MathProblem.from_dict))


@pytest.fixture(scope="session")
def cot_store_path(tmp_path_factory, problems_25) -> Path:
    path = tmp_path_factory.mktemp("stores") / "cot_store.jsonl"
    build_fixture_store(problems_25, Format.COT, path)
    return path


@pytest.fixture(scope="session")
def pot_store_path(tmp_path_factory, problems_25) -> Path:
    path = tmp_path_factory.mktemp("stores") / "pot_store.jsonl"
    build_fixture_store(problems_25, Format.POT, path)
    return path
