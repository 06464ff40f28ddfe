"""Classification schema: questions, label options, and coarse label merges.

The schema is data-driven: a JSON config document defines the questions, their
options (with sentinel flags for the "cannot judge" / "extraction artifact"
options), and the coarse merge groups. A validated ``ClassificationSchema`` is
immutable and safe for unrestricted concurrent reads.

Canonicalization of option names is deliberately conservative: whitespace is
trimmed and collapsed, matching is case-insensitive, and anything else is an
error. An unknown option is never guessed at.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

SENTINEL_NONE = "none"
SENTINEL_NOT_DEFINABLE = "not_definable"
SENTINEL_DATA_ERROR = "data_error"
_SENTINELS = (SENTINEL_NONE, SENTINEL_NOT_DEFINABLE, SENTINEL_DATA_ERROR)


class SchemaError(ValueError):
    """Invalid schema config: duplicate options, missing sentinels, bad merges."""


class LabelValidationError(SchemaError):
    """A raw label list failed validation against a question.

    ``kind`` is one of ``unknown_option``, ``empty``, ``sentinel_conflict``;
    ``offending`` carries the raw text(s) that caused the failure.
    """

    def __init__(self, message: str, kind: str, offending: tuple[str, ...] = ()):
        super().__init__(message)
        self.kind = kind
        self.offending = offending


def canon_key(name: str) -> str:
    """Canonical match key: trimmed, inner whitespace collapsed, case-folded."""
    return re.sub(r"\s+", " ", name.strip()).casefold()


@dataclass(frozen=True)
class LabelOption:
    canonical_name: str
    description: str = ""
    sentinel: str = SENTINEL_NONE

    def __post_init__(self) -> None:
        if self.sentinel not in _SENTINELS:
            raise SchemaError(f"unknown sentinel kind {self.sentinel!r}")
        if not self.canonical_name.strip():
            raise SchemaError("option name must be non-empty")


@dataclass(frozen=True)
class Question:
    id: str
    title: str
    options: tuple[LabelOption, ...]
    multi_select: bool = True
    _by_key: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self) -> None:
        by_key: dict[str, LabelOption] = {}
        for opt in self.options:
            key = canon_key(opt.canonical_name)
            if key in by_key:
                raise SchemaError(
                    f"question {self.id}: duplicate option {opt.canonical_name!r}"
                )
            by_key[key] = opt
        for sentinel in (SENTINEL_NOT_DEFINABLE, SENTINEL_DATA_ERROR):
            n = sum(1 for o in self.options if o.sentinel == sentinel)
            if n != 1:
                raise SchemaError(
                    f"question {self.id}: expected exactly one {sentinel} option, found {n}"
                )
        object.__setattr__(self, "_by_key", by_key)

    def option(self, name: str) -> LabelOption:
        try:
            return self._by_key[canon_key(name)]
        except KeyError:
            raise LabelValidationError(
                f"question {self.id}: unknown option {name!r}",
                kind="unknown_option",
                offending=(name,),
            ) from None

    def has_option(self, name: str) -> bool:
        return canon_key(name) in self._by_key

    @property
    def option_names(self) -> tuple[str, ...]:
        return tuple(o.canonical_name for o in self.options)

    @property
    def data_error_name(self) -> str:
        return next(
            o.canonical_name for o in self.options if o.sentinel == SENTINEL_DATA_ERROR
        )

    @property
    def not_definable_name(self) -> str:
        return next(
            o.canonical_name
            for o in self.options
            if o.sentinel == SENTINEL_NOT_DEFINABLE
        )


@dataclass(frozen=True)
class LabelSet:
    """A validated, non-empty set of canonical labels for one question."""

    question_id: str
    labels: frozenset[str]

    def __post_init__(self) -> None:
        if not self.labels:
            raise LabelValidationError(
                f"question {self.question_id}: empty label set", kind="empty"
            )

    def sorted(self) -> list[str]:
        return sorted(self.labels)


@dataclass(frozen=True)
class MergeGroup:
    question_id: str
    members: frozenset[str]
    merged_name: str


@dataclass(frozen=True)
class CoarseMapping:
    groups: tuple[MergeGroup, ...]

    def for_question(self, question_id: str) -> tuple[MergeGroup, ...]:
        return tuple(g for g in self.groups if g.question_id == question_id)

    def rename(self, question_id: str, label: str) -> str:
        key = canon_key(label)
        for group in self.groups:
            if group.question_id == question_id and any(
                canon_key(m) == key for m in group.members
            ):
                return group.merged_name
        return label


@dataclass(frozen=True)
class ClassificationSchema:
    version: str
    questions: tuple[Question, ...]
    coarse: CoarseMapping

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for q in self.questions:
            if q.id in seen:
                raise SchemaError(f"duplicate question id {q.id!r}")
            seen.add(q.id)
        _check_merges(self.questions, self.coarse)

    @property
    def question_ids(self) -> tuple[str, ...]:
        return tuple(q.id for q in self.questions)

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise SchemaError(f"unknown question id {question_id!r}")


def _check_merges(questions: Iterable[Question], coarse: CoarseMapping) -> None:
    by_id = {q.id: q for q in questions}
    for qid in {g.question_id for g in coarse.groups}:
        if qid not in by_id:
            raise SchemaError(f"merge group references unknown question {qid!r}")
        question = by_id[qid]
        groups = coarse.for_question(qid)
        claimed: set[str] = set()
        for group in groups:
            if not group.members:
                raise SchemaError(f"question {qid}: empty merge group")
            for member in group.members:
                if not question.has_option(member):
                    raise SchemaError(
                        f"question {qid}: merge member {member!r} is not an option"
                    )
                opt = question.option(member)
                if opt.sentinel != SENTINEL_NONE:
                    raise SchemaError(
                        f"question {qid}: sentinel option {member!r} cannot be merged"
                    )
                key = canon_key(member)
                if key in claimed:
                    raise SchemaError(
                        f"question {qid}: option {member!r} appears in two merge groups"
                    )
                claimed.add(key)
        # A merged name colliding with an option outside its own group (or with
        # another group's members) would make coarsening non-idempotent.
        for group in groups:
            merged_key = canon_key(group.merged_name)
            member_keys = {canon_key(m) for m in group.members}
            if question.has_option(group.merged_name) and merged_key not in member_keys:
                raise SchemaError(
                    f"question {qid}: merged name {group.merged_name!r} collides "
                    "with an option outside its merge group"
                )
            for other in groups:
                if other is not group and merged_key in {
                    canon_key(m) for m in other.members
                }:
                    raise SchemaError(
                        f"question {qid}: merged name {group.merged_name!r} is a "
                        "member of another merge group"
                    )


def load_schema(document: Mapping) -> ClassificationSchema:
    """Build a validated schema from a parsed JSON config document."""
    try:
        raw_questions = document["questions"]
    except (KeyError, TypeError):
        raise SchemaError("schema document must contain a 'questions' list") from None
    questions = []
    for raw_q in raw_questions:
        options = tuple(
            LabelOption(
                canonical_name=raw_o["name"],
                description=raw_o.get("description", ""),
                sentinel=raw_o.get("sentinel", SENTINEL_NONE),
            )
            for raw_o in raw_q.get("options", [])
        )
        questions.append(
            Question(
                id=raw_q["id"],
                title=raw_q.get("title", raw_q["id"]),
                options=options,
                multi_select=bool(raw_q.get("multi_select", True)),
            )
        )
    groups = tuple(
        MergeGroup(
            question_id=raw_g["question"],
            members=frozenset(raw_g["members"]),
            merged_name=raw_g["merged_name"],
        )
        for raw_g in document.get("coarse_merges", [])
    )
    return ClassificationSchema(
        version=str(document.get("version", "unversioned")),
        questions=tuple(questions),
        coarse=CoarseMapping(groups=groups),
    )


def load_schema_file(path: str | Path) -> ClassificationSchema:
    with open(path, encoding="utf-8") as fh:
        return load_schema(json.load(fh))


def reference_schema() -> ClassificationSchema:
    """The shipped four-question reference schema."""
    text = resources.files("entilabel.data").joinpath("reference_schema.json").read_text(
        encoding="utf-8"
    )
    return load_schema(json.loads(text))


def validate_labels(question: Question, raw_names: Iterable[str]) -> LabelSet:
    """Resolve raw label strings to a deduplicated, canonical ``LabelSet``.

    Matching is trim- and case-insensitive. Unknown names, an empty input, or
    the data-error sentinel combined with any other label are validation
    errors; nothing is guessed or silently dropped.
    """
    names = list(raw_names)
    if not names:
        raise LabelValidationError(
            f"question {question.id}: no labels given", kind="empty"
        )
    resolved: set[str] = set()
    unknown: list[str] = []
    for name in names:
        try:
            resolved.add(question.option(name).canonical_name)
        except LabelValidationError:
            unknown.append(name)
    if unknown:
        raise LabelValidationError(
            f"question {question.id}: unknown option(s) "
            + ", ".join(repr(u) for u in unknown),
            kind="unknown_option",
            offending=tuple(unknown),
        )
    data_error = question.data_error_name
    if data_error in resolved and len(resolved) > 1:
        raise LabelValidationError(
            f"question {question.id}: {data_error!r} must be the sole label",
            kind="sentinel_conflict",
            offending=tuple(sorted(resolved - {data_error})),
        )
    return LabelSet(question_id=question.id, labels=frozenset(resolved))


def coarsen(mapping: CoarseMapping, label_set: LabelSet) -> LabelSet:
    """Replace each label by its merged name; labels outside merge groups pass through."""
    merged = frozenset(
        mapping.rename(label_set.question_id, label) for label in label_set.labels
    )
    return LabelSet(question_id=label_set.question_id, labels=merged)


def coarsen_raw(
    mapping: CoarseMapping, question_id: str, labels: Iterable[str]
) -> frozenset[str]:
    """Coarsen a plain label set (possibly empty, e.g. a no-consensus gold set)."""
    return frozenset(mapping.rename(question_id, label) for label in labels)
