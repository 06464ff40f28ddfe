import itertools
import random

import pytest
from entilabel.store import (
    AnnotationStore,
    InsufficientAnnotatorsError,
    StoreError,
    make_eval_test_split,
    make_record,
    read_annotations_jsonl,
    read_gold_jsonl,
    write_gold_jsonl,
)

from datagen import NON_SENTINEL, QUESTION_IDS, random_dataset
from oracles import brute_consensus, brute_loo

FULL = {
    "q1": ["Political"],
    "q2": ["Large group"],
    "q3": ["Occasional"],
    "q4": ["Stationary"],
}


def test_submit_and_replace(schema, entity_pool):
    entities = entity_pool()
    store = AnnotationStore(schema, entities)
    record = make_record(schema, "a1", "h000000", FULL, round=1)
    store.submit(record)
    assert len(store.records()) == 1

    replacement = dict(FULL, q2=["Alone"])
    store.submit(make_record(schema, "a1", "h000000", replacement, round=1))
    records = store.records()
    assert len(records) == 1
    assert records[0].answers["q2"].labels == frozenset({"Alone"})


def test_submit_missing_question(schema, entity_pool):
    with pytest.raises(StoreError, match="missing answer for question q3"):
        make_record(schema, "a1", "h000000", {k: v for k, v in FULL.items() if k != "q3"}, 1)


def test_submit_unknown_entity(schema, entity_pool):
    store = AnnotationStore(schema, entity_pool())
    with pytest.raises(StoreError, match="unknown entity"):
        store.submit(make_record(schema, "a1", "ghost", FULL, round=1))


def test_consensus_forced_by_two_of_four(schema, store_factory):
    votes = {"a1": ["Large group"], "a2": ["Large group"], "a3": ["Alone"], "a4": ["Large group"]}
    data = {a: {"e1": dict(FULL, q2=v)} for a, v in votes.items()}
    store = store_factory(data)
    result = store.consensus("e1", threshold=2)
    assert result.answers["q2"] == frozenset({"Large group"})
    assert result.vote_counts[("q2", "Large group")] == 3


def test_consensus_two_labels_reach_threshold(schema, store_factory):
    q1_votes = {
        "a1": ["Cultural/Traditional", "Social welfare"],
        "a2": ["Cultural/Traditional"],
        "a3": ["Sports/Physical activity"],
        "a4": ["Social welfare"],
    }
    data = {a: {"e1": dict(FULL, q1=v)} for a, v in q1_votes.items()}
    result = store_factory(data).consensus("e1", threshold=2)
    assert result.answers["q1"] == frozenset({"Cultural/Traditional", "Social welfare"})


def test_consensus_empty_is_flagged(schema, store_factory):
    q4_votes = {"a1": ["Intense"], "a2": ["Light"], "a3": ["Stationary"], "a4": ["Continuous"]}
    data = {a: {"e1": dict(FULL, q4=v)} for a, v in q4_votes.items()}
    result = store_factory(data).consensus("e1", threshold=2)
    assert result.answers["q4"] == frozenset()
    assert "q4" in result.no_consensus_questions


def test_consensus_insufficient(schema, store_factory):
    store = store_factory({"a1": {"e1": FULL}})
    with pytest.raises(InsufficientAnnotatorsError):
        store.consensus("e1", threshold=2)


def test_loo_examples(schema, store_factory):
    q2_votes = {"a1": ["Small group"], "a2": ["Large group"], "a3": ["Large group"], "a4": ["Alone"]}
    data = {a: {"e1": dict(FULL, q2=v)} for a, v in q2_votes.items()}
    store = store_factory(data)
    result = store.loo_majority("e1", "a1", threshold=2)
    assert result.answers["q2"] == frozenset({"Large group"})
    assert "a1" not in result.contributing_annotators

    distinct = {"a1": ["Alone"], "a2": ["Large group"], "a3": ["Small group"], "a4": ["Not definable"]}
    data = {a: {"e2": dict(FULL, q2=v)} for a, v in distinct.items()}
    result = store_factory(data).loo_majority("e2", "a1", threshold=2)
    assert result.answers["q2"] == frozenset()


def test_loo_excluding_absent_annotator(schema, store_factory):
    data = {a: {"e1": FULL} for a in ("a1", "a2", "a3")}
    store = store_factory(data)
    with_ghost = store.loo_majority("e1", "ghost", threshold=2)
    plain = store.consensus("e1", threshold=2)
    assert with_ghost.answers == plain.answers


def test_latest_round_wins(schema, entity_pool):
    store = AnnotationStore(schema, entity_pool())
    store.submit(make_record(schema, "a1", "h000000", FULL, round=1))
    store.submit(make_record(schema, "a1", "h000000", dict(FULL, q2=["Alone"]), round=2))
    store.submit(make_record(schema, "a2", "h000000", FULL, round=1))
    records = store.latest_records("h000000")
    assert records["a1"].round == 2
    assert records["a1"].answers["q2"].labels == frozenset({"Alone"})
    scoped = store.latest_records("h000000", round=1)
    assert scoped["a1"].round == 1


def test_consensus_matches_brute_force_on_random_data(store_factory):
    for seed in range(20):
        entity_ids, data = random_dataset(seed, n_entities=5)
        store = store_factory(data)
        for entity in entity_ids:
            expected = brute_consensus(
                {a: data[a][entity] for a in data}, QUESTION_IDS, threshold=2
            )
            got = store.consensus(entity, threshold=2).answers
            assert {q: set(v) for q, v in got.items()} == expected
            for excluded in data:
                loo_expected = brute_loo(
                    {a: data[a][entity] for a in data}, QUESTION_IDS, excluded, 2
                )
                loo_got = store.loo_majority(entity, excluded, threshold=2).answers
                assert {q: set(v) for q, v in loo_got.items()} == loo_expected


def test_consensus_threshold_bounds(store_factory):
    entity_ids, data = random_dataset(3, n_entities=3)
    store = store_factory(data)
    annotators = sorted(data)
    for entity in entity_ids:
        union = store.consensus(entity, threshold=1).answers
        intersection = store.consensus(entity, threshold=len(annotators)).answers
        for qid in QUESTION_IDS:
            per_rater = [set(data[a][entity][qid]) for a in annotators]
            assert set(union[qid]) == set().union(*per_rater)
            assert set(intersection[qid]) == set.intersection(*per_rater)


def test_consensus_permutation_invariant(store_factory):
    entity_ids, data = random_dataset(5, n_entities=2)
    base = store_factory(data).consensus(entity_ids[0], threshold=2)
    for perm in itertools.permutations(sorted(data)):
        permuted = {a: data[a] for a in perm}
        again = store_factory(permuted).consensus(entity_ids[0], threshold=2)
        assert again.answers == base.answers


def test_consensus_monotone_under_new_annotators(store_factory):
    for seed in range(25):
        entity_ids, data = random_dataset(seed, n_entities=2, annotators=("a1", "a2", "a3"))
        store = store_factory(data)
        before = store.consensus(entity_ids[0], threshold=2).answers
        rng = random.Random(seed + 1)
        extra = {
            qid: set(rng.sample(NON_SENTINEL[qid], 1 + rng.randrange(2)))
            for qid in QUESTION_IDS
        }
        extended = dict(data)
        extended["a9"] = {e: extra for e in entity_ids}
        after = store_factory(extended).consensus(entity_ids[0], threshold=2).answers
        for qid in QUESTION_IDS:
            assert set(before[qid]) <= set(after[qid])


def test_eval_test_split_reference_shape(entity_pool):
    entities = list(entity_pool(n_hobbies=100, n_orgs=100).values())
    split = make_eval_test_split(entities, seed=7)
    assert len(split.eval_ids) == 50 and len(split.test_ids) == 150
    kinds = {e.entity_id: e.kind for e in entities}
    eval_kinds = [kinds[e] for e in split.eval_ids]
    assert eval_kinds.count("hobby") == 25 and eval_kinds.count("organization") == 25
    assert split.eval_ids | split.test_ids == set(kinds)
    assert not split.eval_ids & split.test_ids

    again = make_eval_test_split(entities, seed=7)
    assert again.eval_ids == split.eval_ids and again.test_ids == split.test_ids
    other = make_eval_test_split(entities, seed=8)
    assert other.eval_ids != split.eval_ids


def test_eval_test_split_pool_too_small(entity_pool):
    entities = list(entity_pool(n_hobbies=5, n_orgs=5).values())
    with pytest.raises(StoreError, match="smaller"):
        make_eval_test_split(entities, seed=1, eval_size=50, test_size=150)


def test_annotations_jsonl_roundtrip(schema, entity_pool, tmp_path):
    path = tmp_path / "annotations.jsonl"
    store = AnnotationStore(schema, entity_pool(), path=path)
    store.submit(make_record(schema, "a1", "h000000", FULL, 1, timestamp="2025-08-08T00:00:00Z"))
    store.submit(make_record(schema, "a2", "h000001", FULL, 1, timestamp="2025-08-08T00:00:01Z"))
    records = read_annotations_jsonl(path, schema)
    assert {(r.annotator, r.entity_id) for r in records} == {("a1", "h000000"), ("a2", "h000001")}
    reloaded = AnnotationStore(schema, entity_pool(), path=path)
    assert len(reloaded.records()) == 2


def test_gold_jsonl_roundtrip(schema, store_factory, tmp_path):
    data = {a: {"e1": FULL, "e2": FULL} for a in ("a1", "a2")}
    store = store_factory(data)
    results = [store.consensus(e, threshold=2) for e in ("e1", "e2")]
    path = tmp_path / "gold.jsonl"
    write_gold_jsonl(results, path)
    gold = read_gold_jsonl(path, schema.question_ids)
    assert gold["e1"]["q2"] == frozenset({"Large group"})
