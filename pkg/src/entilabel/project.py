"""Project directory: the unit of pipeline state.

A project is a plain directory of JSON/JSONL artifacts (no database):
``schema.json`` (falls back to the shipped reference schema),
``entities.jsonl``, ``annotations.jsonl``, and an optional ``rounds.json``
defining annotation rounds and their closure state. Anything a stage
produces (gold, runs, votes, reports) lives alongside them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import EntityRecord, read_entities_jsonl
from .schema import ClassificationSchema, load_schema_file, reference_schema
from .store import AnnotationStore


class ProjectError(ValueError):
    pass


@dataclass
class RoundSpec:
    round: int
    entity_ids: list[str]
    closed: bool = False


@dataclass
class Project:
    root: Path
    schema: ClassificationSchema
    entities: dict[str, EntityRecord]
    store: AnnotationStore
    rounds: dict[int, RoundSpec] = field(default_factory=dict)

    @classmethod
    def open(cls, root: str | Path) -> "Project":
        root = Path(root)
        if not root.is_dir():
            raise ProjectError(f"project directory {root} does not exist")
        schema_path = root / "schema.json"
        schema = load_schema_file(schema_path) if schema_path.exists() else reference_schema()
        entities_path = root / "entities.jsonl"
        entities: dict[str, EntityRecord] = {}
        if entities_path.exists():
            for entity in read_entities_jsonl(entities_path):
                entities[entity.entity_id] = entity
        store = AnnotationStore(
            schema, entities or None, path=root / "annotations.jsonl"
        )
        rounds: dict[int, RoundSpec] = {}
        rounds_path = root / "rounds.json"
        if rounds_path.exists():
            with open(rounds_path, encoding="utf-8") as fh:
                raw = json.load(fh)
            for spec in raw.get("rounds", []):
                number = int(spec["round"])
                rounds[number] = RoundSpec(
                    round=number,
                    entity_ids=[str(e) for e in spec.get("entity_ids", [])],
                    closed=bool(spec.get("closed", False)),
                )
        return cls(root=root, schema=schema, entities=entities, store=store, rounds=rounds)

    def round_spec(self, number: int) -> RoundSpec:
        """Explicit round from rounds.json, or an implicit open round over
        every entity (sorted by id)."""
        if number in self.rounds:
            return self.rounds[number]
        return RoundSpec(round=number, entity_ids=sorted(self.entities), closed=False)
