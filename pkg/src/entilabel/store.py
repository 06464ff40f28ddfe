"""Human annotation store: iterative rounds, consensus gold, evaluation splits.

Storage is append-only with last-write-wins per (annotator, entity, round),
which is what the iterative guideline-refinement workflow needs: an annotator
may resubmit within a round, and every round's history stays on disk.

Consensus uses an absolute k-of-n vote threshold (2-of-4 in the reference
setup). An empty consensus is kept explicit rather than backfilled with a
sentinel label; it is up to evaluation code to decide what to do with it.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass
from math import floor
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import EntityRecord
from .schema import ClassificationSchema, LabelSet, SchemaError, validate_labels


class StoreError(ValueError):
    """Invalid submission or an impossible consensus/split request."""


class InsufficientAnnotatorsError(StoreError):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    annotator: str
    entity_id: str
    answers: Mapping[str, LabelSet]
    round: int
    timestamp: str = ""

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.annotator, self.entity_id, self.round)

    def label_sets(self) -> dict[str, frozenset[str]]:
        return {qid: ls.labels for qid, ls in self.answers.items()}


@dataclass(frozen=True)
class ConsensusResult:
    entity_id: str
    answers: dict[str, frozenset[str]]
    vote_counts: dict[tuple[str, str], int]
    threshold: int
    contributing_annotators: frozenset[str]

    @property
    def no_consensus_questions(self) -> tuple[str, ...]:
        return tuple(sorted(q for q, labels in self.answers.items() if not labels))

    def to_dict(self) -> dict:
        d: dict = {"entity_id": self.entity_id, "threshold": self.threshold}
        for qid in sorted(self.answers):
            d[qid] = sorted(self.answers[qid])
        d["annotators"] = sorted(self.contributing_annotators)
        d["no_consensus"] = list(self.no_consensus_questions)
        return d


@dataclass(frozen=True)
class DatasetSplit:
    eval_ids: frozenset[str]
    test_ids: frozenset[str]
    seed: int

    def to_dict(self) -> dict:
        return {
            "eval_ids": sorted(self.eval_ids),
            "test_ids": sorted(self.test_ids),
            "seed": self.seed,
        }


def make_record(
    schema: ClassificationSchema,
    annotator: str,
    entity_id: str,
    raw_answers: Mapping[str, Iterable[str]],
    round: int,
    timestamp: str = "",
) -> AnnotationRecord:
    """Validate raw per-question label lists into an AnnotationRecord.

    Every schema question must be answered; label lists are validated with
    the schema's canonicalization rules.
    """
    answers: dict[str, LabelSet] = {}
    for question in schema.questions:
        if question.id not in raw_answers:
            raise StoreError(f"missing answer for question {question.id}")
        answers[question.id] = validate_labels(question, list(raw_answers[question.id]))
    return AnnotationRecord(
        annotator=annotator,
        entity_id=entity_id,
        answers=answers,
        round=round,
        timestamp=timestamp,
    )


class AnnotationStore:
    """In-memory annotation table with optional JSONL persistence."""

    def __init__(
        self,
        schema: ClassificationSchema,
        entities: Mapping[str, EntityRecord] | None = None,
        path: str | Path | None = None,
    ):
        self.schema = schema
        self.entities = dict(entities) if entities is not None else None
        self.path = Path(path) if path is not None else None
        self._records: dict[tuple[str, str, int], AnnotationRecord] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            for record in read_annotations_jsonl(self.path, schema):
                self._records[record.key] = record

    def submit(self, record: AnnotationRecord) -> str:
        """Persist a record; a resubmission under the same key replaces it."""
        if self.entities is not None and record.entity_id not in self.entities:
            raise StoreError(f"unknown entity {record.entity_id!r}")
        missing = [q.id for q in self.schema.questions if q.id not in record.answers]
        if missing:
            raise StoreError(f"missing answers for {', '.join(missing)}")
        with self._lock:
            self._records[record.key] = record
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(_record_to_dict(record), sort_keys=True) + "\n")
        return "/".join(map(str, record.key))

    def records(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._records.values())

    def annotators(self) -> list[str]:
        return sorted({r.annotator for r in self.records()})

    def entity_ids(self) -> list[str]:
        return sorted({r.entity_id for r in self.records()})

    def rounds(self) -> list[int]:
        return sorted({r.round for r in self.records()})

    def latest_records(
        self,
        entity_id: str,
        annotators: Iterable[str] | None = None,
        round: int | None = None,
    ) -> dict[str, AnnotationRecord]:
        """Latest record per annotator for one entity (highest round wins)."""
        wanted = set(annotators) if annotators is not None else None
        best: dict[str, AnnotationRecord] = {}
        for record in self.records():
            if record.entity_id != entity_id:
                continue
            if wanted is not None and record.annotator not in wanted:
                continue
            if round is not None and record.round != round:
                continue
            prior = best.get(record.annotator)
            if prior is None or record.round > prior.round:
                best[record.annotator] = record
        return best

    def consensus(
        self,
        entity_id: str,
        annotators: Iterable[str] | None = None,
        threshold: int = 2,
        round: int | None = None,
    ) -> ConsensusResult:
        """Per question, the labels selected by at least ``threshold`` annotators."""
        if threshold < 1:
            raise StoreError("threshold must be >= 1")
        records = self.latest_records(entity_id, annotators, round)
        if len(records) < threshold:
            raise InsufficientAnnotatorsError(
                f"entity {entity_id}: {len(records)} annotator(s) with records, "
                f"threshold {threshold}"
            )
        vote_counts: dict[tuple[str, str], int] = {}
        answers: dict[str, frozenset[str]] = {}
        for question in self.schema.questions:
            tally: dict[str, int] = {}
            for record in records.values():
                for label in record.answers[question.id].labels:
                    tally[label] = tally.get(label, 0) + 1
            for label, count in tally.items():
                vote_counts[(question.id, label)] = count
            answers[question.id] = frozenset(
                label for label, count in tally.items() if count >= threshold
            )
        return ConsensusResult(
            entity_id=entity_id,
            answers=answers,
            vote_counts=vote_counts,
            threshold=threshold,
            contributing_annotators=frozenset(records),
        )

    def loo_majority(
        self,
        entity_id: str,
        excluded_annotator: str,
        threshold: int = 2,
        annotators: Iterable[str] | None = None,
        round: int | None = None,
    ) -> ConsensusResult:
        """Consensus over the remaining annotators, own labels excluded."""
        pool = set(annotators) if annotators is not None else set(
            self.latest_records(entity_id, None, round)
        )
        pool.discard(excluded_annotator)
        return self.consensus(entity_id, pool, threshold, round)

    def answer_maps(
        self,
        annotator: str,
        entity_ids: Iterable[str] | None = None,
        round: int | None = None,
    ) -> dict[str, dict[str, frozenset[str]]]:
        """entity_id -> question -> labels, for one annotator."""
        scope = set(entity_ids) if entity_ids is not None else None
        out: dict[str, dict[str, frozenset[str]]] = {}
        for entity_id in self.entity_ids():
            if scope is not None and entity_id not in scope:
                continue
            record = self.latest_records(entity_id, [annotator], round).get(annotator)
            if record is not None:
                out[entity_id] = record.label_sets()
        return out


def make_eval_test_split(
    entities: Sequence[EntityRecord],
    seed: int,
    eval_size: int = 50,
    test_size: int = 150,
) -> DatasetSplit:
    """Deterministic seeded partition, stratified evenly over entity kinds.

    Requires eval_size + test_size == pool size so the two sets exactly
    cover the annotated pool.
    """
    pool = sorted(entities, key=lambda e: e.entity_id)
    if eval_size < 0 or test_size < 0:
        raise StoreError("split sizes must be non-negative")
    if len(pool) < eval_size + test_size:
        raise StoreError(
            f"pool of {len(pool)} is smaller than requested {eval_size}+{test_size}"
        )
    if len(pool) != eval_size + test_size:
        raise StoreError(
            f"pool of {len(pool)} does not match requested {eval_size}+{test_size}"
        )
    rng = random.Random(seed)
    by_kind: dict[str, list[EntityRecord]] = {}
    for entity in pool:
        by_kind.setdefault(entity.kind, []).append(entity)
    kinds = sorted(by_kind)
    # Largest-remainder allocation of the eval quota across kinds.
    quotas: dict[str, int] = {}
    remainders: list[tuple[float, str]] = []
    for kind in kinds:
        exact = eval_size * len(by_kind[kind]) / len(pool)
        quotas[kind] = floor(exact)
        remainders.append((exact - floor(exact), kind))
    leftover = eval_size - sum(quotas.values())
    for _, kind in sorted(remainders, key=lambda t: (-t[0], t[1]))[:leftover]:
        quotas[kind] += 1
    eval_ids: set[str] = set()
    for kind in kinds:
        members = list(by_kind[kind])
        rng.shuffle(members)
        eval_ids.update(e.entity_id for e in members[: quotas[kind]])
    test_ids = {e.entity_id for e in pool} - eval_ids
    return DatasetSplit(
        eval_ids=frozenset(eval_ids), test_ids=frozenset(test_ids), seed=seed
    )


def _record_to_dict(record: AnnotationRecord) -> dict:
    d: dict = {
        "annotator": record.annotator,
        "entity_id": record.entity_id,
        "round": record.round,
        "timestamp": record.timestamp,
    }
    for qid, label_set in record.answers.items():
        d[qid] = label_set.sorted()
    return d


def read_annotations_jsonl(
    path: str | Path, schema: ClassificationSchema
) -> list[AnnotationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
                records.append(
                    make_record(
                        schema,
                        annotator=str(raw["annotator"]),
                        entity_id=str(raw["entity_id"]),
                        raw_answers={
                            q.id: raw[q.id] for q in schema.questions if q.id in raw
                        },
                        round=int(raw["round"]),
                        timestamp=str(raw.get("timestamp", "")),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, SchemaError, StoreError) as exc:
                raise StoreError(f"line {lineno}: {exc}") from exc
    return records


def write_gold_jsonl(results: Iterable[ConsensusResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for result in sorted(results, key=lambda r: r.entity_id):
            fh.write(json.dumps(result.to_dict(), sort_keys=True) + "\n")


def read_gold_jsonl(
    path: str | Path, question_ids: Sequence[str]
) -> dict[str, dict[str, frozenset[str]]]:
    """entity_id -> question -> labels (possibly empty sets for no-consensus)."""
    gold: dict[str, dict[str, frozenset[str]]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            raw = json.loads(line)
            gold[str(raw["entity_id"])] = {
                qid: frozenset(raw.get(qid, [])) for qid in question_ids
            }
    return gold


def write_split_json(split: DatasetSplit, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_split_json(path: str | Path) -> DatasetSplit:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return DatasetSplit(
        eval_ids=frozenset(raw["eval_ids"]),
        test_ids=frozenset(raw["test_ids"]),
        seed=int(raw["seed"]),
    )
