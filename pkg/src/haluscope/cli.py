"""Command-line surface: each pipeline stage as a subcommand plus a
single-shot `pipeline` convenience.

Exit codes: 0 success, 1 usage or configuration, 2 data validation,
3 harness fault. Failures emit machine-readable JSON on stderr.
"""

from __future__ import annotations

import json
import logging
import shlex
import sys
from pathlib import Path

import click

from . import degeneration, gateway, pipeline, taxonomy
from .corpus import load_dataset, with_limit_overrides
from .errors import (
    ConfigError,
    HaluscopeError,
    HarnessFault,
    IngestionError,
    ProviderError,
    ReportError,
    TemplateError,
    ValidationError,
)

logger = logging.getLogger(__name__)

_EXIT_USAGE = 1
_EXIT_DATA = 2
_EXIT_FAULT = 3


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return obj


def _pick(cli_value, config: dict, key: str, default):
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _degeneration_config(config: dict, overrides: dict) -> degeneration.DegenerationConfig:
    section = dict(config.get("degeneration", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    base = degeneration.DEFAULT_CONFIG
    return degeneration.DegenerationConfig(
        repeat_count=int(section.get("repeat_count", base.repeat_count)),
        block_size=int(section.get("block_size", base.block_size)),
        enum_count=int(section.get("enum_count", base.enum_count)),
        parse_valid_frac=float(section.get("parse_valid_frac", base.parse_valid_frac)),
        window_frac=float(section.get("window_frac", base.window_frac)),
    )


def _run_config(
    ctx: click.Context,
    dataset: str | None,
    completions: str | None,
    require_dataset: bool = False,
) -> pipeline.RunConfig:
    opts = ctx.obj
    config = opts["config_file"]
    dataset_path = dataset or config.get("dataset")
    if dataset_path is None:
        if require_dataset:
            raise ConfigError("a dataset is required (--dataset or config key 'dataset')")
        dataset_path = ""
    interpreter_raw = _pick(opts["interpreter"], config, "interpreter", None)
    if isinstance(interpreter_raw, str):
        interpreter = tuple(shlex.split(interpreter_raw))
    elif interpreter_raw:
        interpreter = tuple(interpreter_raw)
    else:
        interpreter = None
    table_path = _pick(opts["classification_table"], config, "classification_table", None)
    table = taxonomy.load_table(table_path) if table_path else taxonomy.DEFAULT_TABLE
    return pipeline.RunConfig(
        dataset_path=str(dataset_path),
        completions_path=completions or config.get("completions"),
        out_dir=str(_pick(opts["out_dir"], config, "out_dir", "out")),
        interpreter=interpreter,
        wall_time_ms=_pick(opts["wall_time_ms"], config, "wall_time_ms", None),
        memory_bytes=_pick(opts["memory_bytes"], config, "memory_bytes", None),
        jobs=int(_pick(opts["jobs"], config, "jobs", 1)),
        fail_fast=bool(_pick(opts["fail_fast"], config, "fail_fast", False)),
        threshold_k=int(_pick(opts["threshold_k"], config, "threshold_k", 2)),
        table=table,
        degeneration_config=_degeneration_config(config, opts["degeneration_overrides"]),
        indicator_mode=str(_pick(opts["indicator"], config, "indicator", "target")),
        run_id=str(_pick(opts["run_id"], config, "run_id", "run")),
        artifact_root=_pick(opts["artifact_dir"], config, "artifact_dir", None),
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(), help="JSON file of defaults.")
@click.option("--out-dir", type=click.Path(), default=None, help="Artifact directory.")
@click.option("--jobs", type=int, default=None, help="Parallel sandbox workers.")
@click.option("--interpreter", default=None, help="Interpreter command, e.g. 'python3 -u'.")
@click.option("--limits.wall-ms", "wall_time_ms", type=int, default=None)
@click.option("--limits.mem-bytes", "memory_bytes", type=int, default=None)
@click.option("--threshold-k", type=int, default=None, help="Benchmark inclusion threshold.")
@click.option("--classification-table", type=click.Path(), default=None)
@click.option("--indicator", type=click.Choice(["target", "any"]), default=None)
@click.option("--fail-fast", is_flag=True, default=None)
@click.option("--run-id", default=None)
@click.option("--artifact-dir", type=click.Path(), default=None,
              help="Store stdin/stdout/stderr/outcome.json per execution.")
@click.option("--degeneration.repeat-count", "degen_repeat_count", type=int, default=None)
@click.option("--degeneration.block-size", "degen_block_size", type=int, default=None)
@click.option("--degeneration.enum-count", "degen_enum_count", type=int, default=None)
@click.option("--degeneration.parse-valid-frac", "degen_parse_valid_frac", type=float, default=None)
@click.option("--degeneration.window-frac", "degen_window_frac", type=float, default=None)
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def cli(ctx, config_path, out_dir, jobs, interpreter, wall_time_ms, memory_bytes,
        threshold_k, classification_table, indicator, fail_fast, run_id, artifact_dir,
        degen_repeat_count, degen_block_size, degen_enum_count, degen_parse_valid_frac,
        degen_window_frac, verbose):
    """Execution-based detection, classification, and measurement of code
    hallucinations."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = {
        "config_file": _load_config_file(config_path),
        "out_dir": out_dir,
        "jobs": jobs,
        "interpreter": interpreter,
        "wall_time_ms": wall_time_ms,
        "memory_bytes": memory_bytes,
        "threshold_k": threshold_k,
        "classification_table": classification_table,
        "indicator": indicator,
        "fail_fast": fail_fast or None,
        "run_id": run_id,
        "artifact_dir": artifact_dir,
        "degeneration_overrides": {
            "repeat_count": degen_repeat_count,
            "block_size": degen_block_size,
            "enum_count": degen_enum_count,
            "parse_valid_frac": degen_parse_valid_frac,
            "window_frac": degen_window_frac,
        },
    }


def _load_provider(path: str) -> tuple[gateway.ProviderConfig, str]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read provider config {path}: {exc}") from exc
    template = obj.pop("template", gateway.DEFAULT_TEMPLATE)
    try:
        provider = gateway.ProviderConfig(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad provider config {path}: {exc}") from exc
    return provider, template


def _fetch_completions(config: pipeline.RunConfig, provider_path: str) -> str:
    """Fetch a completion for every dataset task and write them to
    completions.jsonl inside the out dir."""
    from .corpus import completion_to_dict

    provider, template = _load_provider(provider_path)
    dataset = load_dataset(config.dataset_path)
    dataset = with_limit_overrides(dataset, config.wall_time_ms, config.memory_bytes)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / "completions.jsonl"

    def write(path: Path) -> None:
        with path.open("w", encoding="utf-8") as fh:
            for task in dataset.tasks:
                instruction = gateway.render_instruction(task.question, task.limits, template)
                completion = gateway.fetch_completion(task, provider, instruction)
                fh.write(json.dumps(completion_to_dict(completion), sort_keys=True) + "\n")

    pipeline.atomic_write(target, write)
    return str(target)


@cli.command()
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--completions", type=click.Path(exists=True), default=None)
@click.option("--provider", "provider_path", type=click.Path(exists=True), default=None,
              help="Provider config JSON; fetches completions before validating.")
@click.pass_context
def validate(ctx, dataset, completions, provider_path):
    """Detection pass: degeneration gate, sandboxed execution,
    classification. Writes states.jsonl."""
    if completions and provider_path:
        raise ConfigError("--completions and --provider are mutually exclusive")
    config = _run_config(ctx, dataset, completions, require_dataset=True)
    if provider_path:
        config.completions_path = _fetch_completions(config, provider_path)
    path = pipeline.validate_stage(config)
    click.echo(f"wrote {path}")


@cli.command()
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--states", type=click.Path(exists=True), default=None)
@click.pass_context
def identify(ctx, dataset, states):
    """Aggregation pass: profiles.jsonl and frequencies.json."""
    config = _run_config(ctx, dataset, None)
    path = pipeline.identify_stage(config, states)
    click.echo(f"wrote {path}")


@cli.command("build-bench")
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--profiles", type=click.Path(exists=True), default=None)
@click.pass_context
def build_bench(ctx, dataset, profiles):
    """Construction pass: benchmark.jsonl and its summary CSV."""
    config = _run_config(ctx, dataset, None)
    path = pipeline.build_bench_stage(config, profiles)
    click.echo(f"wrote {path}")


@cli.command()
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--benchmark", type=click.Path(exists=True), default=None)
@click.option("--profiles", type=click.Path(exists=True), default=None)
@click.pass_context
def evaluate(ctx, dataset, benchmark, profiles):
    """Score models against a benchmark manifest; writes evaluation.json
    and the report files."""
    config = _run_config(ctx, dataset, None)
    path = pipeline.evaluate_stage(config, benchmark, profiles)
    click.echo(f"wrote {path}")


@cli.command()
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--profiles", type=click.Path(exists=True), default=None)
@click.pass_context
def report(ctx, dataset, profiles):
    """Render markdown/CSV/JSON reports and the co-occurrence summary."""
    config = _run_config(ctx, dataset, None)
    path = pipeline.report_stage(config, profiles)
    click.echo(f"wrote {path}")


@cli.command("pipeline")
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--completions", type=click.Path(exists=True), default=None)
@click.option("--provider", "provider_path", type=click.Path(exists=True), default=None)
@click.pass_context
def pipeline_cmd(ctx, dataset, completions, provider_path):
    """All stages in sequence over one artifact directory."""
    if completions and provider_path:
        raise ConfigError("--completions and --provider are mutually exclusive")
    config = _run_config(ctx, dataset, completions, require_dataset=True)
    if provider_path:
        config.completions_path = _fetch_completions(config, provider_path)
    path = pipeline.run_pipeline(config)
    click.echo(f"wrote {path}")


def _error_json(exc: BaseException, exit_code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except (ConfigError, TemplateError) as exc:
        _error_json(exc, _EXIT_USAGE)
        return _EXIT_USAGE
    except click.UsageError as exc:
        _error_json(exc, _EXIT_USAGE)
        return _EXIT_USAGE
    except (IngestionError, ValidationError, ReportError) as exc:
        _error_json(exc, _EXIT_DATA)
        return _EXIT_DATA
    except (ProviderError, HarnessFault) as exc:
        _error_json(exc, _EXIT_FAULT)
        return _EXIT_FAULT
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return _EXIT_USAGE
    except HaluscopeError as exc:
        _error_json(exc, _EXIT_FAULT)
        return _EXIT_FAULT
    except OSError as exc:
        _error_json(exc, _EXIT_FAULT)
        return _EXIT_FAULT
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
