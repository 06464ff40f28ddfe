"""Dataset-level reports: label distributions, multi-label stats, run manifests.

Percentages are reported against entity/mention totals, not label-assignment
totals, so multi-label questions legitimately sum past 100%. Reports are pure
aggregations: rerunning on the same inputs is byte-identical (the run
manifest's wall-clock throughput block is the one documented exception).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Iterable, Mapping, Sequence

from .corpus import EntityRecord, KIND_HOBBY, KIND_ORGANIZATION
from .gateway import OUTCOME_OK, RunRecord

WEIGHT_UNIQUE = "unique"
WEIGHT_MENTIONS = "mentions"

FinalLabels = Mapping[str, Mapping[str, AbstractSet[str]]]  # entity -> question -> labels


class ReportError(ValueError):
    pass


@dataclass
class DistributionRow:
    question_id: str
    label: str
    unique_count: int
    unique_pct: float
    weighted_count: int
    weighted_pct: float
    kind_breakdown: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "label": self.label,
            "unique_count": self.unique_count,
            "unique_pct": self.unique_pct,
            "weighted_count": self.weighted_count,
            "weighted_pct": self.weighted_pct,
            "kind_breakdown": self.kind_breakdown,
        }


def label_distribution(
    final_labels: FinalLabels,
    entities: Mapping[str, EntityRecord],
    weighting: str = WEIGHT_UNIQUE,
) -> list[DistributionRow]:
    """Per (question, label) rows with unique and mention-weighted counts.

    Rows are sorted by the selected weighting's count descending (label
    ascending on ties). Every labeled entity must exist in the entity table.
    """
    if weighting not in (WEIGHT_UNIQUE, WEIGHT_MENTIONS):
        raise ReportError(f"unknown weighting {weighting!r}")
    missing = [e for e in final_labels if e not in entities]
    if missing:
        raise ReportError(f"labels reference unknown entities: {missing[:3]!r}")
    total_entities = len(final_labels)
    total_mentions = sum(entities[e].mention_count for e in final_labels)
    kind_totals = {KIND_HOBBY: [0, 0], KIND_ORGANIZATION: [0, 0]}  # unique, mentions
    for entity_id in final_labels:
        entity = entities[entity_id]
        kind_totals[entity.kind][0] += 1
        kind_totals[entity.kind][1] += entity.mention_count

    # (question, label) -> [unique, weighted, {kind: [unique, weighted]}]
    acc: dict[tuple[str, str], list] = {}
    for entity_id, answers in final_labels.items():
        entity = entities[entity_id]
        for question_id, labels in answers.items():
            for label in labels:
                cell = acc.setdefault(
                    (question_id, label),
                    [0, 0, {KIND_HOBBY: [0, 0], KIND_ORGANIZATION: [0, 0]}],
                )
                cell[0] += 1
                cell[1] += entity.mention_count
                cell[2][entity.kind][0] += 1
                cell[2][entity.kind][1] += entity.mention_count

    rows = []
    for (question_id, label), (unique, weighted, kinds) in acc.items():
        breakdown = {}
        for kind, (k_unique, k_weighted) in kinds.items():
            k_total_u, k_total_m = kind_totals[kind]
            breakdown[kind] = {
                "unique_count": k_unique,
                "unique_pct": 100.0 * k_unique / k_total_u if k_total_u else 0.0,
                "weighted_count": k_weighted,
                "weighted_pct": 100.0 * k_weighted / k_total_m if k_total_m else 0.0,
            }
        rows.append(
            DistributionRow(
                question_id=question_id,
                label=label,
                unique_count=unique,
                unique_pct=100.0 * unique / total_entities if total_entities else 0.0,
                weighted_count=weighted,
                weighted_pct=100.0 * weighted / total_mentions if total_mentions else 0.0,
                kind_breakdown=breakdown,
            )
        )
    sort_count = (
        (lambda r: r.unique_count) if weighting == WEIGHT_UNIQUE else (lambda r: r.weighted_count)
    )
    rows.sort(key=lambda r: (r.question_id, -sort_count(r), r.label))
    return rows


def multilabel_stats(final_labels: FinalLabels) -> dict[str, dict]:
    """Per question: how many entities carry two or more labels."""
    question_ids = sorted({qid for answers in final_labels.values() for qid in answers})
    stats = {}
    for question_id in question_ids:
        n = 0
        multi = 0
        inventory: set[str] = set()
        for answers in final_labels.values():
            labels = answers.get(question_id)
            if labels is None:
                continue
            n += 1
            inventory.update(labels)
            if len(labels) >= 2:
                multi += 1
        stats[question_id] = {
            "n_entities": n,
            "multi_count": multi,
            "multi_label_fraction": multi / n if n else 0.0,
            "label_inventory_size": len(inventory),
        }
    return stats


def run_manifest(
    records: Sequence[RunRecord], elapsed_s: float | None = None
) -> dict:
    """Attempt statistics, failure taxonomy, and token throughput per template.

    Throughput (tokens/s) is only present when a wall-clock duration is
    supplied; everything else is deterministic given the records.
    """
    per_template: dict[str, dict] = {}
    for record in records:
        agg = per_template.setdefault(
            record.template_id,
            {
                "runs": 0,
                "failed_runs": 0,
                "attempts": 0,
                "max_attempts": 0,
                "outcomes": {},
                "prompt_tokens": 0,
                "completion_tokens": 0,
            },
        )
        agg["runs"] += 1
        if record.final_outcome != OUTCOME_OK:
            agg["failed_runs"] += 1
        agg["attempts"] += record.attempt_count
        agg["max_attempts"] = max(agg["max_attempts"], record.attempt_count)
        for attempt in record.attempts:
            agg["outcomes"][attempt.outcome] = agg["outcomes"].get(attempt.outcome, 0) + 1
            agg["prompt_tokens"] += attempt.prompt_tokens or 0
            agg["completion_tokens"] += attempt.completion_tokens or 0
    for agg in per_template.values():
        agg["mean_attempts"] = agg["attempts"] / agg["runs"] if agg["runs"] else 0.0
        agg["outcomes"] = dict(sorted(agg["outcomes"].items()))
    total_runs = sum(a["runs"] for a in per_template.values())
    total_attempts = sum(a["attempts"] for a in per_template.values())
    manifest = {
        "templates": dict(sorted(per_template.items())),
        "total_runs": total_runs,
        "total_attempts": total_attempts,
        "mean_attempts": total_attempts / total_runs if total_runs else 0.0,
        "total_failed_runs": sum(a["failed_runs"] for a in per_template.values()),
        "total_prompt_tokens": sum(a["prompt_tokens"] for a in per_template.values()),
        "total_completion_tokens": sum(a["completion_tokens"] for a in per_template.values()),
    }
    if elapsed_s is not None and elapsed_s > 0:
        manifest["timing"] = {
            "elapsed_s": elapsed_s,
            "input_tokens_per_s": manifest["total_prompt_tokens"] / elapsed_s,
            "output_tokens_per_s": manifest["total_completion_tokens"] / elapsed_s,
            "requests_per_s": total_attempts / elapsed_s,
        }
    return manifest


# ---------------------------------------------------------------------------
# text/CSV rendering


def render_distribution_text(
    rows: Sequence[DistributionRow], weighting: str = WEIGHT_UNIQUE
) -> str:
    lines = []
    current_q: str | None = None
    for row in rows:
        if row.question_id != current_q:
            current_q = row.question_id
            lines.append("")
            lines.append(f"{current_q} distribution ({weighting})")
            if weighting == WEIGHT_MENTIONS:
                header = (
                    "Label".ljust(28) + "Hobbies".rjust(10) + "%".rjust(7)
                    + "Orgs".rjust(10) + "%".rjust(7) + "Total".rjust(10) + "%".rjust(7)
                )
            else:
                header = "Label".ljust(28) + "n".rjust(10) + "%".rjust(7)
            lines.append(header)
            lines.append("-" * len(header))
        if weighting == WEIGHT_MENTIONS:
            hobby = row.kind_breakdown[KIND_HOBBY]
            org = row.kind_breakdown[KIND_ORGANIZATION]
            lines.append(
                row.label[:27].ljust(28)
                + f"{hobby['weighted_count']:10,d}" + f"{hobby['weighted_pct']:7.1f}"
                + f"{org['weighted_count']:10,d}" + f"{org['weighted_pct']:7.1f}"
                + f"{row.weighted_count:10,d}" + f"{row.weighted_pct:7.1f}"
            )
        else:
            lines.append(
                row.label[:27].ljust(28)
                + f"{row.unique_count:10,d}" + f"{row.unique_pct:7.1f}"
            )
    lines.append("")
    return "\n".join(lines[1:]) + "\n"


def render_multilabel_text(stats: Mapping[str, dict]) -> str:
    header = "Question".ljust(12) + "Multi-label %".rjust(14) + "Total".rjust(9) + "Labels".rjust(8)
    lines = ["Multi-label entity distribution", header, "-" * len(header)]
    for question_id in sorted(stats):
        s = stats[question_id]
        lines.append(
            question_id.ljust(12)
            + f"{100.0 * s['multi_label_fraction']:13.1f}%"
            + f"{s['multi_count']:9,d}"
            + f"{s['label_inventory_size']:8d}"
        )
    return "\n".join(lines) + "\n"


def render_manifest_text(manifest: Mapping) -> str:
    lines = ["Run manifest"]
    header = (
        "Template".ljust(20) + "runs".rjust(7) + "failed".rjust(8)
        + "mean att".rjust(10) + "max att".rjust(9)
    )
    lines.append(header)
    lines.append("-" * len(header))
    for template_id, agg in manifest["templates"].items():
        lines.append(
            template_id[:19].ljust(20)
            + f"{agg['runs']:7d}" + f"{agg['failed_runs']:8d}"
            + f"{agg['mean_attempts']:10.3f}" + f"{agg['max_attempts']:9d}"
        )
    lines.append(
        f"Overall: {manifest['total_runs']} runs, mean {manifest['mean_attempts']:.3f} "
        f"attempts, {manifest['total_failed_runs']} failed"
    )
    outcome_totals: dict[str, int] = {}
    for agg in manifest["templates"].values():
        for outcome, count in agg["outcomes"].items():
            outcome_totals[outcome] = outcome_totals.get(outcome, 0) + count
    for outcome in sorted(outcome_totals):
        lines.append(f"  {outcome}: {outcome_totals[outcome]}")
    timing = manifest.get("timing")
    if timing:
        lines.append(
            f"Throughput: {timing['input_tokens_per_s']:.2f} tokens/s input, "
            f"{timing['output_tokens_per_s']:.2f} tokens/s output"
        )
    return "\n".join(lines) + "\n"


def write_distribution_csv(rows: Iterable[DistributionRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "question_id", "label", "unique_count", "unique_pct",
                "weighted_count", "weighted_pct",
                "hobby_weighted_count", "organization_weighted_count",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.question_id, row.label, row.unique_count,
                    f"{row.unique_pct:.6f}", row.weighted_count,
                    f"{row.weighted_pct:.6f}",
                    row.kind_breakdown[KIND_HOBBY]["weighted_count"],
                    row.kind_breakdown[KIND_ORGANIZATION]["weighted_count"],
                ]
            )


def rank_series(entities: Sequence[EntityRecord]) -> list[tuple[int, int]]:
    """(rank, mention_count) series for rank-distribution curves, as CSV data."""
    counts = sorted((e.mention_count for e in entities), reverse=True)
    return [(rank, count) for rank, count in enumerate(counts, start=1)]
