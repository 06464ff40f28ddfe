"""Entity corpus: mention ingestion, aggregation, pattern analysis, hierarchy splits.

Aggregation is deliberately case-sensitive (only whitespace is normalized):
casing and inflected variants of the same underlying activity are distinct
surface strings at this stage, and folding them together is the classifier's
job, not ingestion's.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, Iterator, Sequence

KIND_HOBBY = "hobby"
KIND_ORGANIZATION = "organization"
KINDS = (KIND_HOBBY, KIND_ORGANIZATION)
PERSON_SLOTS = ("husband", "wife", "other")


class CorpusError(ValueError):
    """Malformed mention input, unknown split source, or bad pattern."""


def normalize_surface(surface: str) -> str:
    return re.sub(r"\s+", " ", surface.strip())


@dataclass(frozen=True)
class MentionRecord:
    interview_id: str
    person_slot: str
    surface: str
    kind: str

    def __post_init__(self) -> None:
        if self.person_slot not in PERSON_SLOTS:
            raise CorpusError(f"unknown person slot {self.person_slot!r}")
        if self.kind not in KINDS:
            raise CorpusError(f"unknown entity kind {self.kind!r}")
        if not self.surface.strip():
            raise CorpusError("mention surface is empty")


@dataclass
class EntityRecord:
    entity_id: str
    surface: str
    kind: str
    mention_count: int
    role: str | None = None
    hierarchy: str | None = None
    base_of: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EntityRecord":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class HierarchySplit:
    source_surface: str
    base_surface: str
    role: str | None = None
    hierarchy: str | None = None

    def __post_init__(self) -> None:
        if not self.base_surface.strip():
            raise CorpusError("split base surface is empty")
        if normalize_surface(self.base_surface) != normalize_surface(
            self.source_surface
        ) and not (self.role or self.hierarchy):
            raise CorpusError(
                "split changes the surface without extracting a role or hierarchy: "
                f"{self.source_surface!r} -> {self.base_surface!r}"
            )


def read_mentions_jsonl(
    path: str | Path, on_error: str = "fail"
) -> Iterator[MentionRecord]:
    """Yield mentions from a JSONL file; malformed lines are fatal or skipped.

    ``on_error``: "fail" raises with the line number, "skip" drops the line.
    """
    if on_error not in ("fail", "skip"):
        raise ValueError(f"on_error must be 'fail' or 'skip', got {on_error!r}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                yield MentionRecord(
                    interview_id=str(raw["interview_id"]),
                    person_slot=raw["person_slot"],
                    surface=raw["surface"],
                    kind=raw["kind"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                if on_error == "fail":
                    raise CorpusError(f"line {lineno}: {exc}") from exc


def aggregate_mentions(mentions: Iterable[MentionRecord]) -> list[EntityRecord]:
    """Fold a mention stream into unique (surface, kind) entities with counts.

    Grouping is exact-string after whitespace normalization; ids are assigned
    in first-seen order per kind, so output is deterministic for a given
    input order.
    """
    counts: dict[tuple[str, str], int] = {}
    order: list[tuple[str, str]] = []
    for mention in mentions:
        key = (normalize_surface(mention.surface), mention.kind)
        if key not in counts:
            counts[key] = 0
            order.append(key)
        counts[key] += 1
    entities = []
    seq = {KIND_HOBBY: 0, KIND_ORGANIZATION: 0}
    for surface, kind in order:
        seq[kind] += 1
        entities.append(
            EntityRecord(
                entity_id=f"{kind[0]}{seq[kind]:06d}",
                surface=surface,
                kind=kind,
                mention_count=counts[(surface, kind)],
            )
        )
    return entities


def total_mentions(entities: Sequence[EntityRecord]) -> int:
    return sum(e.mention_count for e in entities)


def rank_coverage(entities: Sequence[EntityRecord], k: int) -> float:
    """Share of all mentions held by the k most-mentioned entities.

    Ties are broken by surface lexicographic order so the value is
    deterministic. An empty corpus counts as fully covered.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    total = total_mentions(entities)
    if total == 0:
        return 1.0
    ranked = sorted(entities, key=lambda e: (-e.mention_count, e.surface))
    return sum(e.mention_count for e in ranked[:k]) / total


@dataclass
class PatternMatches:
    pattern: str
    entities: list[EntityRecord]

    @property
    def count(self) -> int:
        return len(self.entities)


def pattern_count(
    entities: Sequence[EntityRecord], pattern: str, kind: str | None = None
) -> PatternMatches:
    """Case-insensitive prefix match (``lit*``) or exact match (no wildcard).

    Matches are sorted by mention count descending, surface ascending.
    """
    star = pattern.find("*")
    if star >= 0 and star != len(pattern) - 1:
        raise CorpusError(f"wildcard only supported in final position: {pattern!r}")
    scoped = [e for e in entities if kind is None or e.kind == kind]
    if star >= 0:
        prefix = pattern[:-1].casefold()
        matched = [e for e in scoped if e.surface.casefold().startswith(prefix)]
    else:
        literal = pattern.casefold()
        matched = [e for e in scoped if e.surface.casefold() == literal]
    matched.sort(key=lambda e: (-e.mention_count, e.surface))
    return PatternMatches(pattern=pattern, entities=matched)


@dataclass
class SplitOutcome:
    entities: list[EntityRecord]
    role_vocabulary: dict[str, int] = field(default_factory=dict)
    hierarchy_vocabulary: dict[str, int] = field(default_factory=dict)
    applied: int = 0
    created_bases: int = 0


def apply_hierarchy_splits(
    entities: Sequence[EntityRecord], splits: Sequence[HierarchySplit]
) -> SplitOutcome:
    """Re-point split organization entities onto their base organizations.

    Each split's source entity is merged into the entity named by its base
    surface (created if absent), summing mention counts; role and hierarchy
    vocabularies are collected with per-source frequencies. Hobby entities are
    never touched. Splits are applied in order, so chained splits are allowed;
    a split whose source is missing (or already merged away) is an error.
    """
    result = [EntityRecord.from_dict(e.to_dict()) for e in entities]
    by_key: dict[tuple[str, str], EntityRecord] = {}
    for entity in result:
        key = (normalize_surface(entity.surface), entity.kind)
        if key in by_key:
            raise CorpusError(f"duplicate entity surface {entity.surface!r}")
        by_key[key] = entity
    max_seq = 0
    for entity in result:
        m = re.fullmatch(r"o(\d+)", entity.entity_id)
        if m:
            max_seq = max(max_seq, int(m.group(1)))

    roles: dict[str, int] = {}
    hierarchies: dict[str, int] = {}
    applied = 0
    created = 0
    for split in splits:
        source_key = (normalize_surface(split.source_surface), KIND_ORGANIZATION)
        source = by_key.get(source_key)
        if source is None:
            raise CorpusError(
                f"split references unknown organization {split.source_surface!r}"
            )
        if split.role:
            roles[split.role] = roles.get(split.role, 0) + 1
        if split.hierarchy:
            hierarchies[split.hierarchy] = hierarchies.get(split.hierarchy, 0) + 1
        base_key = (normalize_surface(split.base_surface), KIND_ORGANIZATION)
        if base_key == source_key:
            continue
        applied += 1
        base = by_key.get(base_key)
        if base is None:
            max_seq += 1
            created += 1
            base = EntityRecord(
                entity_id=f"o{max_seq:06d}",
                surface=normalize_surface(split.base_surface),
                kind=KIND_ORGANIZATION,
                mention_count=0,
            )
            by_key[base_key] = base
            result.append(base)
        base.mention_count += source.mention_count
        source.base_of = base.entity_id
        source.role = split.role
        source.hierarchy = split.hierarchy
        del by_key[source_key]
        result.remove(source)
    return SplitOutcome(
        entities=result,
        role_vocabulary=roles,
        hierarchy_vocabulary=hierarchies,
        applied=applied,
        created_bases=created,
    )


def write_entities_jsonl(entities: Sequence[EntityRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entity in entities:
            fh.write(json.dumps(entity.to_dict(), sort_keys=True) + "\n")


def read_entities_jsonl(path: str | Path) -> list[EntityRecord]:
    entities = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entities.append(EntityRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    return entities


def read_splits_jsonl(path: str | Path) -> list[HierarchySplit]:
    splits = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                splits.append(
                    HierarchySplit(
                        source_surface=raw["source_surface"],
                        base_surface=raw["base_surface"],
                        role=raw.get("role") or None,
                        hierarchy=raw.get("hierarchy") or None,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    return splits
