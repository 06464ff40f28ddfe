import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from entilabel.corpus import EntityRecord
from entilabel.schema import reference_schema
from entilabel.store import AnnotationStore, make_record

FIXTURE_DIR = Path(__file__).resolve().parent / "fixtures" / "synthetic"


@pytest.fixture(scope="session")
def schema():
    return reference_schema()


@pytest.fixture()
def entity_pool():
    def build(n_hobbies=4, n_orgs=4, count=5):
        entities = {}
        for i in range(n_hobbies):
            e = EntityRecord(f"h{i:06d}", f"hobby {i}", "hobby", count)
            entities[e.entity_id] = e
        for i in range(n_orgs):
            e = EntityRecord(f"o{i:06d}", f"org {i}", "organization", count)
            entities[e.entity_id] = e
        return entities

    return build


@pytest.fixture()
def project_factory(tmp_path, schema):
    """Materialize a project directory from {annotator: {entity: {qid: labels}}}."""
    import json

    from entilabel.corpus import write_entities_jsonl
    from entilabel.store import AnnotationStore

    def build(data, name="proj", rounds=None, kinds=None):
        root = tmp_path / name
        root.mkdir()
        entity_ids = sorted({e for per in data.values() for e in per})
        entities = []
        for i, eid in enumerate(entity_ids):
            kind = (kinds or {}).get(eid, "hobby" if i % 2 == 0 else "organization")
            entities.append(EntityRecord(eid, f"surface {eid}", kind, i + 1))
        write_entities_jsonl(entities, root / "entities.jsonl")
        store = AnnotationStore(
            schema, {e.entity_id: e for e in entities}, path=root / "annotations.jsonl"
        )
        for annotator in sorted(data):
            for eid in sorted(data[annotator]):
                store.submit(
                    make_record(
                        schema, annotator, eid, data[annotator][eid], round=1,
                        timestamp="2025-08-08T00:00:00Z",
                    )
                )
        if rounds is not None:
            (root / "rounds.json").write_text(json.dumps({"rounds": rounds}), encoding="utf-8")
        return root

    return build


@pytest.fixture()
def store_factory(schema):
    """Build an in-memory store from {annotator: {entity: {qid: labels}}}."""

    def build(data, entities=None, round=1):
        store = AnnotationStore(schema, entities)
        for annotator, per_entity in data.items():
            for entity_id, answers in per_entity.items():
                store.submit(
                    make_record(schema, annotator, entity_id, answers, round=round)
                )
        return store

    return build
