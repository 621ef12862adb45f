from __future__ import annotations

import json
from pathlib import Path

import pytest

from haluscope.corpus import ResourceLimits

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def default_limits() -> ResourceLimits:
    return ResourceLimits(wall_time_ms=5000, memory_bytes=256 * 2**20)


def load_jsonl(path: Path) -> list[dict]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(json.loads(line))
    return records


@pytest.fixture(scope="session")
def clean_corpus() -> list[dict]:
    return load_jsonl(FIXTURES / "clean" / "clean_corpus.jsonl")


@pytest.fixture(scope="session")
def degenerate_fixtures() -> list[dict]:
    return load_jsonl(FIXTURES / "degenerate" / "degenerate_fixtures.jsonl")


@pytest.fixture(scope="session")
def taxonomy_corpus() -> dict:
    base = FIXTURES / "taxonomy"
    return {
        "tasks": base / "tasks.jsonl",
        "completions": base / "completions.jsonl",
        "expected": json.loads((base / "expected_states.json").read_text()),
    }


@pytest.fixture(scope="session")
def mini_corpus() -> dict:
    base = FIXTURES / "mini"
    return {"tasks": base / "tasks.jsonl", "completions": base / "completions.jsonl"}
