"""File-mediated pipeline stages: validate -> identify -> build-bench ->
evaluate -> report.

Each stage reads and writes JSONL/JSON artifacts so intermediate states
can be audited or injected. Outputs are deterministic: records are sorted,
JSON keys are sorted, and no stage consumes entropy or embeds timestamps.
Partially written files keep a .partial suffix.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from . import aggregate, bench, degeneration, report as report_mod, sandbox, taxonomy
from .corpus import Completion, Dataset, load_completions, load_dataset, with_limit_overrides
from .errors import IngestionError, ReportError
from .taxonomy import ClassificationTable, ClassKind, Subcategory

logger = logging.getLogger(__name__)

STATES_FILE = "states.jsonl"
PROFILES_FILE = "profiles.jsonl"
FREQUENCIES_FILE = "frequencies.json"
BENCHMARK_FILE = "benchmark.jsonl"
BENCHMARK_SUMMARY_FILE = "benchmark_summary.csv"
EVALUATION_FILE = "evaluation.json"
REPORT_MD_FILE = "report.md"
REPORT_CSV_FILE = "report.csv"
REPORT_JSON_FILE = "report.json"
COOCCURRENCE_FILE = "cooccurrence.json"
NOT_EXECUTED = "not_executed"


@dataclass
class RunConfig:
    dataset_path: str
    completions_path: str | None = None
    out_dir: str = "out"
    interpreter: tuple[str, ...] | None = None
    wall_time_ms: int | None = None
    memory_bytes: int | None = None
    jobs: int = 1
    fail_fast: bool = False
    threshold_k: int = bench.DEFAULT_THRESHOLD_K
    table: ClassificationTable = field(default_factory=lambda: taxonomy.DEFAULT_TABLE)
    degeneration_config: degeneration.DegenerationConfig = field(
        default_factory=lambda: degeneration.DEFAULT_CONFIG
    )
    indicator_mode: str = "target"
    run_id: str = "run"
    artifact_root: str | None = None


def atomic_write(path: Path, write: Callable[[Path], None]) -> None:
    """Write through a .partial file; the final name appears only on
    success, so interrupted commands leave a flagged partial output."""
    partial = path.with_name(path.name + ".partial")
    write(partial)
    os.replace(partial, path)


def _state_row(
    record: aggregate.ClassifiedRecord, outcome: sandbox.ExecutionOutcome | None
) -> dict:
    row = {
        "task_id": record.task_id,
        "model_id": record.model_id,
        "test_index": record.test_index,
        "test_count": record.test_count,
        "classification": taxonomy.classification_to_dict(record.classification),
        "status": outcome.status.value if outcome is not None else NOT_EXECUTED,
    }
    if outcome is not None:
        row["exception_name"] = outcome.exception_name
        row["wall_time_ms"] = outcome.wall_time_ms
        row["peak_memory_bytes"] = outcome.peak_memory_bytes
    return row


def classify_corpus(
    dataset: Dataset,
    completions: Sequence[Completion],
    table: ClassificationTable = taxonomy.DEFAULT_TABLE,
    degeneration_config: degeneration.DegenerationConfig = degeneration.DEFAULT_CONFIG,
    interpreter: Sequence[str] | None = None,
    jobs: int = 1,
    fail_fast: bool = False,
    artifact_root: str | None = None,
) -> list[tuple[aggregate.ClassifiedRecord, sandbox.ExecutionOutcome | None]]:
    """Run the full detection flow for every completion: degeneration gate,
    execution of every test case, classification. Returns (record, outcome)
    pairs; degenerate completions carry a single record with no outcome."""
    tasks = dataset.task_map()
    results: list[tuple[aggregate.ClassifiedRecord, sandbox.ExecutionOutcome | None]] = []
    pending_requests: list[sandbox.ExecutionRequest] = []
    pending_meta: list[tuple[Completion, int, int]] = []  # completion, test_index, test_count
    none_verdicts: dict[tuple[str, str], degeneration.DegenerationVerdict] = {}

    for completion in completions:
        task = tasks.get(completion.task_id)
        if task is None:
            logger.warning(
                "skipping completion for unknown task_id %r (model %s)",
                completion.task_id,
                completion.model_id,
            )
            continue
        verdict = degeneration.detect(
            completion.source_code, completion.truncated_at_limit, degeneration_config
        )
        test_count = len(task.test_cases)
        if verdict.kind is not degeneration.DegenerationKind.NONE:
            classification = taxonomy.classify(verdict, None, table)
            results.append(
                (
                    aggregate.ClassifiedRecord(
                        task_id=completion.task_id,
                        model_id=completion.model_id,
                        test_index=None,
                        test_count=test_count,
                        classification=classification,
                    ),
                    None,
                )
            )
            continue
        none_verdicts[(completion.task_id, completion.model_id)] = verdict
        if fail_fast:
            outcomes = sandbox.run_completion(
                completion.source_code,
                task,
                interpreter=interpreter,
                fail_fast=True,
                artifact_root=artifact_root,
            )
            for index, outcome in enumerate(outcomes):
                classification = taxonomy.classify(verdict, outcome, table)
                results.append(
                    (
                        aggregate.ClassifiedRecord(
                            task_id=completion.task_id,
                            model_id=completion.model_id,
                            test_index=index,
                            test_count=test_count,
                            classification=classification,
                        ),
                        outcome,
                    )
                )
            continue
        for index, test in enumerate(task.test_cases):
            pending_requests.append(
                sandbox.ExecutionRequest(
                    key=(completion.task_id, completion.model_id, index),
                    source_code=completion.source_code,
                    test=test,
                    limits=task.limits,
                    interpreter=tuple(interpreter) if interpreter else None,
                    artifact_dir=sandbox._artifact_subdir(
                        artifact_root, f"{completion.task_id}__{completion.model_id}", index
                    ),
                )
            )
            pending_meta.append((completion, index, test_count))

    outcomes = sandbox.execute_batch(pending_requests, jobs=jobs)
    for (completion, index, test_count), outcome in zip(pending_meta, outcomes):
        verdict = none_verdicts[(completion.task_id, completion.model_id)]
        classification = taxonomy.classify(verdict, outcome, table)
        results.append(
            (
                aggregate.ClassifiedRecord(
                    task_id=completion.task_id,
                    model_id=completion.model_id,
                    test_index=index,
                    test_count=test_count,
                    classification=classification,
                ),
                outcome,
            )
        )

    results.sort(
        key=lambda pair: (
            pair[0].task_id,
            pair[0].model_id,
            -1 if pair[0].test_index is None else pair[0].test_index,
        )
    )
    return results


def validate_stage(config: RunConfig) -> Path:
    """Detection pass over a corpus: writes one classified record per
    (task, model, test) to states.jsonl."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.dataset_path)
    dataset = with_limit_overrides(dataset, config.wall_time_ms, config.memory_bytes)
    if config.completions_path is None:
        raise IngestionError("validate requires a completions file (use --completions)")
    completions = load_completions(config.completions_path, set(dataset.task_map()))
    pairs = classify_corpus(
        dataset,
        completions,
        table=config.table,
        degeneration_config=config.degeneration_config,
        interpreter=config.interpreter,
        jobs=config.jobs,
        fail_fast=config.fail_fast,
        artifact_root=config.artifact_root,
    )
    fault_count = sum(
        1 for record, _ in pairs if record.classification.kind is ClassKind.HARNESS_FAULT
    )
    if fault_count:
        logger.warning("%d executions ended in harness faults", fault_count)

    states_path = out_dir / STATES_FILE

    def write(path: Path) -> None:
        with path.open("w", encoding="utf-8") as fh:
            for record, outcome in pairs:
                fh.write(json.dumps(_state_row(record, outcome), sort_keys=True) + "\n")

    atomic_write(states_path, write)
    return states_path


def load_states(path: str | Path) -> list[aggregate.ClassifiedRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(
                    f"malformed JSON: {exc.msg}", path=str(path), line=lineno
                ) from exc
            records.append(
                aggregate.ClassifiedRecord(
                    task_id=obj["task_id"],
                    model_id=obj["model_id"],
                    test_index=obj.get("test_index"),
                    test_count=int(obj["test_count"]),
                    classification=taxonomy.classification_from_dict(obj["classification"]),
                )
            )
    return records


def identify_stage(config: RunConfig, states_path: str | Path | None = None) -> Path:
    """Aggregation pass: profiles.jsonl plus frequency lists at both
    granularities."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    states = load_states(states_path or out_dir / STATES_FILE)
    profiles = aggregate.build_profiles(states)

    profiles_path = out_dir / PROFILES_FILE

    def write_profiles(path: Path) -> None:
        with path.open("w", encoding="utf-8") as fh:
            for profile in profiles:
                fh.write(json.dumps(aggregate.profile_to_dict(profile), sort_keys=True) + "\n")

    atomic_write(profiles_path, write_profiles)

    freq_payload = {
        "subcategory": aggregate.frequency_list_to_dict(
            aggregate.frequency_list(profiles, "subcategory")
        ),
        "raw_cause": aggregate.frequency_list_to_dict(
            aggregate.frequency_list(profiles, "raw_cause")
        ),
    }

    def write_freq(path: Path) -> None:
        path.write_text(
            json.dumps(freq_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    atomic_write(out_dir / FREQUENCIES_FILE, write_freq)
    return profiles_path


def load_profiles(path: str | Path) -> list[aggregate.SampleProfile]:
    profiles = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(
                    f"malformed JSON: {exc.msg}", path=str(path), line=lineno
                ) from exc
            profiles.append(aggregate.profile_from_dict(obj))
    return profiles


def build_bench_stage(config: RunConfig, profiles_path: str | Path | None = None) -> Path:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = load_profiles(profiles_path or out_dir / PROFILES_FILE)
    manifest = bench.build(profiles, threshold_k=config.threshold_k, run_ids=(config.run_id,))
    benchmark_path = out_dir / BENCHMARK_FILE
    atomic_write(benchmark_path, lambda p: bench.export_manifest(manifest, p))
    atomic_write(out_dir / BENCHMARK_SUMMARY_FILE, lambda p: bench.export_summary_csv(manifest, p))
    return benchmark_path


def evaluate_stage(
    config: RunConfig,
    benchmark_path: str | Path | None = None,
    profiles_path: str | Path | None = None,
) -> Path:
    """Score every model found in the profiles against the benchmark and
    render the report files."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = bench.load_manifest(benchmark_path or out_dir / BENCHMARK_FILE)
    profiles = load_profiles(profiles_path or out_dir / PROFILES_FILE)
    grouped = aggregate.profiles_by_model(profiles)
    if not grouped:
        raise ReportError("no profiles to evaluate")

    all_cells: list[report_mod.HRCell] = []
    crosshits_by_model: dict[str, dict] = {}
    for model_id in sorted(grouped):
        cells, crosshits = report_mod.evaluate_model(
            manifest, grouped[model_id], indicator_mode=config.indicator_mode
        )
        all_cells.extend(cells)
        crosshits_by_model[model_id] = report_mod.crosshits_to_dict(crosshits)
    hr_report = report_mod.render_report(all_cells)

    evaluation_payload = {
        "indicator_mode": config.indicator_mode,
        "report": report_mod.report_to_dict(hr_report),
        "crosshits": crosshits_by_model,
    }
    atomic_write(
        out_dir / EVALUATION_FILE,
        lambda p: p.write_text(
            json.dumps(evaluation_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        ),
    )
    _write_report_files(out_dir, hr_report, crosshits_by_model)
    return out_dir / EVALUATION_FILE


def _write_report_files(out_dir: Path, hr_report, crosshits_by_model: dict) -> None:
    markdown = report_mod.render_markdown(hr_report)
    crosshit_sections = []
    for model_id, crosshits in sorted(crosshits_by_model.items()):
        rows = [
            f"| {target} | {observed} | {count} |"
            for target, row in sorted(crosshits.items())
            for observed, count in sorted(row.items())
        ]
        if rows:
            crosshit_sections.append(
                f"\n### Off-target hallucinations: {model_id}\n\n"
                "| Target | Observed | Samples |\n|---|---|---|\n" + "\n".join(rows) + "\n"
            )
    if crosshit_sections:
        markdown += "\n## Cross-hit tables\n" + "".join(crosshit_sections)
    atomic_write(
        out_dir / REPORT_MD_FILE, lambda p: p.write_text(markdown, encoding="utf-8")
    )
    atomic_write(
        out_dir / REPORT_CSV_FILE,
        lambda p: p.write_text(report_mod.render_csv(hr_report), encoding="utf-8"),
    )
    atomic_write(
        out_dir / REPORT_JSON_FILE,
        lambda p: p.write_text(report_mod.render_json(hr_report), encoding="utf-8"),
    )


def report_stage(config: RunConfig, profiles_path: str | Path | None = None) -> Path:
    """Render the co-occurrence summary (and re-render report files when an
    evaluation artifact exists)."""
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    profiles = load_profiles(profiles_path or out_dir / PROFILES_FILE)
    grouped = aggregate.profiles_by_model(profiles)

    payload = {}
    for model_id in sorted(grouped):
        matrix, rate = aggregate.cooccurrence(grouped[model_id])
        payload[model_id] = {
            "matrix": matrix.to_dict(),
            "cross_task_rate": rate,
            "cross_task_rate_percent": aggregate.format_rate(rate),
        }
    atomic_write(
        out_dir / COOCCURRENCE_FILE,
        lambda p: p.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        ),
    )

    evaluation_path = out_dir / EVALUATION_FILE
    if evaluation_path.exists():
        payload_eval = json.loads(evaluation_path.read_text(encoding="utf-8"))
        cells = []
        for row in payload_eval["report"]["rows"]:
            for sub_value, hr in row["subcategory_hr"].items():
                subcategory = Subcategory(sub_value)
                cells.append(
                    report_mod.HRCell(
                        model_id=row["model_id"],
                        subcategory=subcategory,
                        hallucinated_samples=row["hallucinated_samples"][sub_value],
                        total_samples=payload_eval["report"]["sample_counts"][sub_value],
                    )
                )
        hr_report = report_mod.render_report(cells)
        _write_report_files(out_dir, hr_report, payload_eval.get("crosshits", {}))
    return out_dir / COOCCURRENCE_FILE


def run_pipeline(config: RunConfig) -> Path:
    """Single-shot convenience: all four stages over one out_dir. Equivalent
    to running the stages separately over the same files."""
    states = validate_stage(config)
    profiles = identify_stage(config, states)
    benchmark = build_bench_stage(config, profiles)
    evaluation = evaluate_stage(config, benchmark, profiles)
    report_stage(config, profiles)
    return evaluation
