"""Canonical data model: tasks, test cases, completions, datasets.

All values are read-only after construction and safe to share across
workers. The interchange format is JSON-lines with explicit field names.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IngestionError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_WALL_TIME_MS = 5_000
DEFAULT_MEMORY_BYTES = 256 * 2**20

MIN_WALL_TIME_MS = 100
MIN_MEMORY_BYTES = 16 * 2**20


@dataclass(frozen=True)
class TestCase:
    """One stdin/stdout check. `input` is fed to the program's standard
    input verbatim; `expected_output` may be the empty string (an explicit
    expectation of no output), but it must always be present."""

    __test__ = False  # domain type, not a pytest class

    input: str
    expected_output: str


@dataclass(frozen=True)
class ResourceLimits:
    wall_time_ms: int = DEFAULT_WALL_TIME_MS
    memory_bytes: int = DEFAULT_MEMORY_BYTES

    def __post_init__(self) -> None:
        if self.wall_time_ms < MIN_WALL_TIME_MS:
            raise ValidationError(
                f"wall_time_ms must be >= {MIN_WALL_TIME_MS}, got {self.wall_time_ms}"
            )
        if self.memory_bytes < MIN_MEMORY_BYTES:
            raise ValidationError(
                f"memory_bytes must be >= {MIN_MEMORY_BYTES}, got {self.memory_bytes}"
            )


@dataclass(frozen=True)
class Task:
    task_id: str
    question: str
    test_cases: tuple[TestCase, ...]
    limits: ResourceLimits = field(default_factory=ResourceLimits)

    def __post_init__(self) -> None:
        if not self.task_id:
            raise ValidationError("task_id must be non-empty")
        if not self.test_cases:
            raise ValidationError(f"task {self.task_id!r} has no test cases")


@dataclass(frozen=True)
class Completion:
    """One model's response for one task. `source_code` is derived
    deterministically from `raw_response` (first fenced block, else the
    response itself) unless the record supplies it explicitly."""

    task_id: str
    model_id: str
    raw_response: str
    source_code: str
    sample_index: int | None = None
    truncated_at_limit: bool = False


@dataclass(frozen=True)
class Dataset:
    dataset_id: str
    tasks: tuple[Task, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for task in self.tasks:
            if task.task_id in seen:
                raise ValidationError(f"duplicate task_id {task.task_id!r}")
            seen.add(task.task_id)

    def task_map(self) -> dict[str, Task]:
        return {t.task_id: t for t in self.tasks}


def _iter_jsonl(path: Path) -> list[tuple[int, dict]]:
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(
                    f"malformed JSON: {exc.msg}", path=str(path), line=lineno
                ) from exc
            if not isinstance(obj, dict):
                raise IngestionError("expected a JSON object", path=str(path), line=lineno)
            records.append((lineno, obj))
    return records


def _require(obj: dict, key: str, path: Path, lineno: int):
    try:
        return obj[key]
    except KeyError:
        raise IngestionError(f"missing required field {key!r}", path=str(path), line=lineno) from None


def task_from_dict(obj: dict, *, path: Path | None = None, lineno: int | None = None) -> Task:
    src = Path(path) if path is not None else Path("<memory>")
    ln = lineno if lineno is not None else 0
    task_id = str(_require(obj, "task_id", src, ln))
    question = str(_require(obj, "question", src, ln))
    raw_cases = _require(obj, "test_cases", src, ln)
    if not isinstance(raw_cases, list):
        raise IngestionError("'test_cases' must be a list", path=str(src), line=ln)
    cases = []
    for case in raw_cases:
        if not isinstance(case, dict):
            raise IngestionError("test case must be an object", path=str(src), line=ln)
        case_input = _require(case, "input", src, ln)
        # Missing expected_output is a schema error; the empty string is a
        # legitimate expectation and must survive ingestion.
        expected = _require(case, "expected_output", src, ln)
        cases.append(TestCase(input=str(case_input), expected_output=str(expected)))
    limits_obj = obj.get("limits") or {}
    limits = ResourceLimits(
        wall_time_ms=int(limits_obj.get("wall_time_ms", DEFAULT_WALL_TIME_MS)),
        memory_bytes=int(limits_obj.get("memory_bytes", DEFAULT_MEMORY_BYTES)),
    )
    return Task(task_id=task_id, question=question, test_cases=tuple(cases), limits=limits)


def task_to_dict(task: Task) -> dict:
    return {
        "task_id": task.task_id,
        "question": task.question,
        "test_cases": [
            {"input": c.input, "expected_output": c.expected_output} for c in task.test_cases
        ],
        "limits": {
            "wall_time_ms": task.limits.wall_time_ms,
            "memory_bytes": task.limits.memory_bytes,
        },
    }


def load_dataset(path: str | Path, dataset_id: str | None = None) -> Dataset:
    """Load a tasks.jsonl file, preserving file order.

    Raises IngestionError (naming the line) on malformed records and
    ValidationError on invariant violations (duplicate ids, empty test
    lists)."""
    path = Path(path)
    tasks = []
    for lineno, obj in _iter_jsonl(path):
        try:
            tasks.append(task_from_dict(obj, path=path, lineno=lineno))
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(dataset_id=dataset_id or path.stem, tasks=tuple(tasks))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for task in dataset.tasks:
            fh.write(json.dumps(task_to_dict(task), sort_keys=True) + "\n")


def completion_from_dict(
    obj: dict, *, path: Path | None = None, lineno: int | None = None
) -> Completion:
    from .gateway import extract_code  # deferred: gateway imports corpus types

    src = Path(path) if path is not None else Path("<memory>")
    ln = lineno if lineno is not None else 0
    raw_response = str(_require(obj, "raw_response", src, ln))
    source = obj.get("source_code")
    if source is None:
        source = extract_code(raw_response)
    sample_index = obj.get("sample_index")
    return Completion(
        task_id=str(_require(obj, "task_id", src, ln)),
        model_id=str(_require(obj, "model_id", src, ln)),
        raw_response=raw_response,
        source_code=str(source),
        sample_index=None if sample_index is None else int(sample_index),
        truncated_at_limit=bool(obj.get("truncated_at_limit", False)),
    )


def completion_to_dict(completion: Completion) -> dict:
    obj = {
        "task_id": completion.task_id,
        "model_id": completion.model_id,
        "raw_response": completion.raw_response,
        "source_code": completion.source_code,
        "truncated_at_limit": completion.truncated_at_limit,
    }
    if completion.sample_index is not None:
        obj["sample_index"] = completion.sample_index
    return obj


def load_completions(
    path: str | Path, known_task_ids: set[str] | None = None
) -> list[Completion]:
    """Load a completions.jsonl file.

    Records referencing task ids outside `known_task_ids` are retained and
    a warning is emitted, so partial completion dumps stay evaluable.
    Repeated (task_id, model_id) pairs are rejected unless every repeat
    carries an explicit sample_index."""
    path = Path(path)
    completions = []
    seen_pairs: set[tuple[str, str]] = set()
    seen_indexed: set[tuple[str, str, int]] = set()
    for lineno, obj in _iter_jsonl(path):
        completion = completion_from_dict(obj, path=path, lineno=lineno)
        key = (completion.task_id, completion.model_id)
        if completion.sample_index is None:
            if key in seen_pairs:
                raise ValidationError(
                    f"{path}:{lineno}: repeated completion for {key} without sample_index"
                )
            seen_pairs.add(key)
        else:
            triple = key + (completion.sample_index,)
            if triple in seen_indexed:
                raise ValidationError(f"{path}:{lineno}: repeated completion {triple}")
            seen_indexed.add(triple)
        if known_task_ids is not None and completion.task_id not in known_task_ids:
            logger.warning(
                "completion %s:%s references unknown task_id %r",
                path,
                lineno,
                completion.task_id,
            )
        completions.append(completion)
    return completions


def with_limit_overrides(
    dataset: Dataset, wall_time_ms: int | None = None, memory_bytes: int | None = None
) -> Dataset:
    """Return a copy of the dataset with per-run limit overrides applied."""
    if wall_time_ms is None and memory_bytes is None:
        return dataset
    tasks = []
    for task in dataset.tasks:
        limits = ResourceLimits(
            wall_time_ms=wall_time_ms if wall_time_ms is not None else task.limits.wall_time_ms,
            memory_bytes=memory_bytes if memory_bytes is not None else task.limits.memory_bytes,
        )
        tasks.append(replace(task, limits=limits))
    return Dataset(dataset_id=dataset.dataset_id, tasks=tuple(tasks))
