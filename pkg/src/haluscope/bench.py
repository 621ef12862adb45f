"""Benchmark-subset construction: threshold cross-model hallucination
frequencies into per-subcategory task sets and export a manifest.

A task joins a subcategory's set when its observation count across all
evaluated models strictly exceeds the inclusion threshold. A task may sit
under several subcategories when it clears the threshold for each; the
overlap rate is reported rather than deduplicated away.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError, IngestionError
from .taxonomy import (
    CATEGORY_ORDER,
    SUBCATEGORY_ORDER,
    Category,
    Subcategory,
    category_of,
    subcategories_of,
)
from .aggregate import SampleProfile

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD_K = 2


@dataclass(frozen=True)
class BenchmarkEntry:
    task_id: str
    target_subcategory: Subcategory
    observed_frequency: int
    contributing_models: tuple[str, ...]

    @property
    def sample_count(self) -> int:
        return len(self.contributing_models)


@dataclass(frozen=True)
class Provenance:
    run_ids: tuple[str, ...] = ()
    threshold_k: int = DEFAULT_THRESHOLD_K


@dataclass(frozen=True)
class BenchmarkManifest:
    entries_by_subcategory: Mapping[Subcategory, tuple[BenchmarkEntry, ...]]
    provenance: Provenance = field(default_factory=Provenance)

    def entries(self) -> list[BenchmarkEntry]:
        result = []
        for subcategory in SUBCATEGORY_ORDER:
            result.extend(self.entries_by_subcategory.get(subcategory, ()))
        return result

    def subcategory_stats(self) -> dict[Subcategory, tuple[int, int]]:
        """(task_count, sample_count) per subcategory."""
        stats = {}
        for subcategory in SUBCATEGORY_ORDER:
            entries = self.entries_by_subcategory.get(subcategory, ())
            stats[subcategory] = (
                len(entries),
                sum(e.sample_count for e in entries),
            )
        return stats

    def category_stats(self) -> dict[Category, tuple[int, int]]:
        """(task_count, sample_count) per category: the sum over its two
        subcategories (a task under both subcategories counts twice, which
        keeps the additivity structure exact)."""
        sub_stats = self.subcategory_stats()
        stats = {}
        for category in CATEGORY_ORDER:
            tasks = samples = 0
            for subcategory in subcategories_of(category):
                t, s = sub_stats[subcategory]
                tasks += t
                samples += s
            stats[category] = (tasks, samples)
        return stats

    def overlap_rate(self) -> float:
        """Fraction of distinct tasks appearing under more than one
        subcategory."""
        membership: dict[str, int] = defaultdict(int)
        for entries in self.entries_by_subcategory.values():
            for entry in entries:
                membership[entry.task_id] += 1
        if not membership:
            return 0.0
        return sum(1 for n in membership.values() if n > 1) / len(membership)


def build(
    profiles: Iterable[SampleProfile],
    threshold_k: int = DEFAULT_THRESHOLD_K,
    run_ids: Iterable[str] = (),
) -> BenchmarkManifest:
    """Threshold cross-model frequencies into a manifest.

    Frequency of a subcategory for a task = number of (model, execution)
    observations of that subcategory across all models. Inclusion is
    strict (frequency > threshold_k). Output is deterministic: entries
    sorted by frequency descending, ties by task_id."""
    if threshold_k <= 0:
        raise ConfigError(f"threshold_k must be positive, got {threshold_k}")
    profiles = list(profiles)
    if not profiles:
        logger.warning("no profiles supplied; emitting an empty manifest")
    models = {p.model_id for p in profiles}
    if profiles and len(models) < 2:
        logger.warning(
            "benchmark built from a single model (%s); cross-model frequency "
            "induction assumes several",
            next(iter(models)),
        )

    freq: dict[Subcategory, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    contributors: dict[Subcategory, dict[str, set[str]]] = defaultdict(lambda: defaultdict(set))
    for profile in profiles:
        for subcategory, count in profile.subcategory_counts().items():
            freq[subcategory][profile.task_id] += count
            contributors[subcategory][profile.task_id].add(profile.model_id)

    entries_by_subcategory: dict[Subcategory, tuple[BenchmarkEntry, ...]] = {}
    for subcategory in SUBCATEGORY_ORDER:
        ranked = sorted(
            freq.get(subcategory, {}).items(), key=lambda item: (-item[1], item[0])
        )
        entries = tuple(
            BenchmarkEntry(
                task_id=task_id,
                target_subcategory=subcategory,
                observed_frequency=count,
                contributing_models=tuple(sorted(contributors[subcategory][task_id])),
            )
            for task_id, count in ranked
            if count > threshold_k
        )
        entries_by_subcategory[subcategory] = entries
    return BenchmarkManifest(
        entries_by_subcategory=entries_by_subcategory,
        provenance=Provenance(run_ids=tuple(run_ids), threshold_k=threshold_k),
    )


def _summary_record(manifest: BenchmarkManifest) -> dict:
    sub_stats = manifest.subcategory_stats()
    cat_stats = manifest.category_stats()
    categories = []
    for category in CATEGORY_ORDER:
        cat_tasks, cat_samples = cat_stats[category]
        subcategories = []
        for subcategory in subcategories_of(category):
            tasks, samples = sub_stats[subcategory]
            subcategories.append(
                {"subcategory": subcategory.value, "tasks": tasks, "samples": samples}
            )
        categories.append(
            {
                "category": category.value,
                "tasks": cat_tasks,
                "samples": cat_samples,
                "subcategories": subcategories,
            }
        )
    return {
        "record_type": "summary",
        "provenance": {
            "run_ids": list(manifest.provenance.run_ids),
            "threshold_k": manifest.provenance.threshold_k,
        },
        "categories": categories,
    }


def export_manifest(manifest: BenchmarkManifest, path: str | Path) -> None:
    """Write the manifest as JSONL: one summary header record, then one
    record per entry. Byte-identical for identical manifests."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(_summary_record(manifest), sort_keys=True) + "\n")
        for entry in manifest.entries():
            record = {
                "record_type": "entry",
                "task_id": entry.task_id,
                "target_subcategory": entry.target_subcategory.value,
                "observed_frequency": entry.observed_frequency,
                "contributing_models": list(entry.contributing_models),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> BenchmarkManifest:
    path = Path(path)
    provenance = Provenance()
    grouped: dict[Subcategory, list[BenchmarkEntry]] = defaultdict(list)
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
            if obj.get("record_type") == "summary":
                prov = obj.get("provenance", {})
                provenance = Provenance(
                    run_ids=tuple(prov.get("run_ids", ())),
                    threshold_k=int(prov.get("threshold_k", DEFAULT_THRESHOLD_K)),
                )
            elif obj.get("record_type") == "entry":
                subcategory = Subcategory(obj["target_subcategory"])
                grouped[subcategory].append(
                    BenchmarkEntry(
                        task_id=obj["task_id"],
                        target_subcategory=subcategory,
                        observed_frequency=int(obj["observed_frequency"]),
                        contributing_models=tuple(obj.get("contributing_models", ())),
                    )
                )
            else:
                raise IngestionError(
                    f"unknown record_type {obj.get('record_type')!r}",
                    path=str(path),
                    line=lineno,
                )
    entries_by_subcategory = {
        sub: tuple(grouped.get(sub, ())) for sub in SUBCATEGORY_ORDER
    }
    return BenchmarkManifest(
        entries_by_subcategory=entries_by_subcategory, provenance=provenance
    )


def export_summary_csv(manifest: BenchmarkManifest, path: str | Path) -> None:
    """Summary table as CSV for spreadsheet diffing: one row per
    subcategory with its parent category totals."""
    sub_stats = manifest.subcategory_stats()
    cat_stats = manifest.category_stats()
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["category", "category_tasks", "category_samples", "subcategory", "tasks", "samples"]
        )
        for subcategory in SUBCATEGORY_ORDER:
            category = category_of(subcategory)
            cat_tasks, cat_samples = cat_stats[category]
            tasks, samples = sub_stats[subcategory]
            writer.writerow(
                [category.value, cat_tasks, cat_samples, subcategory.value, tasks, samples]
            )
