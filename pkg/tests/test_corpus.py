import random

import pytest
from hypothesis import given, strategies as st

from entilabel.corpus import (
    CorpusError,
    EntityRecord,
    HierarchySplit,
    MentionRecord,
    aggregate_mentions,
    apply_hierarchy_splits,
    pattern_count,
    rank_coverage,
    read_entities_jsonl,
    read_mentions_jsonl,
    total_mentions,
    write_entities_jsonl,
)

from oracles import brute_prefix_matches, brute_topk_coverage


def mentions_of(surfaces, kind="organization"):
    return [
        MentionRecord(interview_id=f"i{i}", person_slot="husband", surface=s, kind=kind)
        for i, s in enumerate(surfaces)
    ]


def entities_of(counts, kind="organization"):
    return [
        EntityRecord(f"x{i:04d}", f"surface {i:04d}", kind, c)
        for i, c in enumerate(counts)
    ]


def test_aggregation_is_case_sensitive():
    entities = aggregate_mentions(mentions_of(["Martat", "martat", "Martat"]))
    by_surface = {e.surface: e.mention_count for e in entities}
    assert by_surface == {"Martat": 2, "martat": 1}


def test_aggregation_empty_stream():
    assert aggregate_mentions([]) == []


def test_aggregation_counts_sum():
    entities = aggregate_mentions(mentions_of(["kalastus"] * 6, kind="hobby"))
    assert len(entities) == 1
    assert entities[0].mention_count == 6
    assert entities[0].kind == "hobby"


def test_aggregation_normalizes_whitespace():
    entities = aggregate_mentions(mentions_of(["  urheilu  seura ", "urheilu seura"]))
    assert len(entities) == 1
    assert entities[0].surface == "urheilu seura"


def test_same_surface_different_kind_distinct():
    mixed = mentions_of(["Martat"], kind="hobby") + mentions_of(["Martat"])
    entities = aggregate_mentions(mixed)
    assert len(entities) == 2
    assert {e.kind for e in entities} == {"hobby", "organization"}


def test_rank_coverage_examples():
    entities = entities_of([50, 30, 20])
    assert rank_coverage(entities, 1) == 0.5
    assert rank_coverage(entities, 3) == 1.0
    assert rank_coverage(entities, 0) == 0.0
    with pytest.raises(ValueError):
        rank_coverage(entities, -1)


def test_rank_coverage_zipfian_vs_oracle():
    rng = random.Random(11)
    counts = [max(1, int(1000 / (rank + 1))) for rank in range(500)]
    rng.shuffle(counts)
    entities = entities_of(counts)
    for k in (0, 1, 17, 200, 499, 500, 900):
        assert rank_coverage(entities, k) == pytest.approx(
            brute_topk_coverage(counts, k), abs=1e-15
        )


@given(st.lists(st.integers(min_value=1, max_value=50), min_size=1, max_size=30))
def test_rank_coverage_monotone(counts):
    entities = entities_of(counts)
    values = [rank_coverage(entities, k) for k in range(len(counts) + 1)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(1.0)


def test_pattern_count_prefix():
    entities = entities_of([5, 3, 2])
    entities[0].surface = "Marttayhdistys"
    entities[1].surface = "Martat"
    entities[2].surface = "kalastus"
    result = pattern_count(entities, "mart*")
    assert result.count == 2
    assert [e.surface for e in result.entities] == ["Marttayhdistys", "Martat"]
    assert pattern_count([], "mart*").count == 0


def test_pattern_count_exact_and_star():
    entities = entities_of([1, 1])
    entities[0].surface = "Martat"
    entities[1].surface = "Martat ry"
    exact = pattern_count(entities, "Martat")
    assert [e.surface for e in exact.entities] == ["Martat"]
    assert pattern_count(entities, "*").count == 2  # bare wildcard matches all


def test_pattern_count_oracle():
    surfaces = [f"mart {i}" for i in range(7)] + [f"kerho {i}" for i in range(5)]
    entities = entities_of([1] * len(surfaces))
    for e, s in zip(entities, surfaces):
        e.surface = s
    for pattern in ("mart*", "MART*", "kerho 3", "nothing*"):
        got = sorted(e.surface for e in pattern_count(entities, pattern).entities)
        assert got == sorted(brute_prefix_matches(surfaces, pattern))


def test_pattern_count_bad_wildcard():
    with pytest.raises(CorpusError, match="wildcard"):
        pattern_count([], "ma*rt")


def test_hierarchy_split_example():
    source = "Chairman of the Administrative Board of the Karelian Society"
    entities = aggregate_mentions(mentions_of([source] * 3 + ["Karelian Society"]))
    split = HierarchySplit(
        source_surface=source,
        base_surface="Karelian Society",
        role="Chairman",
        hierarchy="Administrative Board",
    )
    outcome = apply_hierarchy_splits(entities, [split])
    assert len(outcome.entities) == 1
    base = outcome.entities[0]
    assert base.surface == "Karelian Society"
    assert base.mention_count == 4
    assert outcome.role_vocabulary == {"Chairman": 1}
    assert outcome.hierarchy_vocabulary == {"Administrative Board": 1}


def test_identity_split_is_noop():
    entities = aggregate_mentions(mentions_of(["Karelian Society"] * 2))
    split = HierarchySplit(
        source_surface="Karelian Society", base_surface="Karelian Society"
    )
    outcome = apply_hierarchy_splits(entities, [split])
    assert [e.to_dict() for e in outcome.entities] == [e.to_dict() for e in entities]
    assert outcome.applied == 0


def test_two_sources_one_base_merge_counts():
    entities = aggregate_mentions(
        mentions_of(["Chair of Club"] * 2 + ["Secretary of Club"] * 3 + ["Club"])
    )
    splits = [
        HierarchySplit("Chair of Club", "Club", role="Chair"),
        HierarchySplit("Secretary of Club", "Club", role="Secretary"),
    ]
    outcome = apply_hierarchy_splits(entities, splits)
    # Brute-force regroup: all six mentions belong to "Club".
    assert len(outcome.entities) == 1
    assert outcome.entities[0].mention_count == 6
    assert outcome.role_vocabulary == {"Chair": 1, "Secretary": 1}


def test_split_creates_missing_base():
    entities = aggregate_mentions(mentions_of(["Chair of New Club"] * 4))
    outcome = apply_hierarchy_splits(
        entities, [HierarchySplit("Chair of New Club", "New Club", role="Chair")]
    )
    assert len(outcome.entities) == 1
    assert outcome.entities[0].surface == "New Club"
    assert outcome.entities[0].mention_count == 4
    assert outcome.created_bases == 1


def test_split_unknown_source_errors():
    entities = aggregate_mentions(mentions_of(["Club"]))
    with pytest.raises(CorpusError, match="unknown organization"):
        apply_hierarchy_splits(entities, [HierarchySplit("Ghost", "Club", role="x")])


def test_split_leaves_hobbies_alone():
    entities = aggregate_mentions(
        mentions_of(["Club"], kind="hobby") + mentions_of(["Chair of Club"])
    )
    outcome = apply_hierarchy_splits(
        entities, [HierarchySplit("Chair of Club", "Club", role="Chair")]
    )
    kinds = {(e.surface, e.kind) for e in outcome.entities}
    assert ("Club", "hobby") in kinds
    assert ("Club", "organization") in kinds


def test_split_invariant_requires_extraction():
    with pytest.raises(CorpusError, match="without extracting"):
        HierarchySplit(source_surface="A of B", base_surface="B")


@given(
    st.lists(
        st.tuples(st.sampled_from(["a", "b", "c", "d"]), st.integers(1, 9)),
        min_size=1,
        max_size=8,
    )
)
def test_mention_mass_conserved(spec):
    mentions = []
    for surface, count in spec:
        mentions.extend(mentions_of([f"role of {surface}"] * count))
    entities = aggregate_mentions(mentions)
    total_before = total_mentions(entities)
    splits = [
        HierarchySplit(e.surface, e.surface.removeprefix("role of "), role="role")
        for e in entities
    ]
    outcome = apply_hierarchy_splits(entities, splits)
    assert total_mentions(outcome.entities) == total_before


def test_jsonl_roundtrip(tmp_path):
    entities = aggregate_mentions(mentions_of(["Martat", "martat"]))
    path = tmp_path / "entities.jsonl"
    write_entities_jsonl(entities, path)
    again = read_entities_jsonl(path)
    assert [e.to_dict() for e in again] == [e.to_dict() for e in entities]


def test_read_mentions_error_modes(tmp_path):
    path = tmp_path / "mentions.jsonl"
    path.write_text(
        '{"interview_id": "i1", "person_slot": "wife", "surface": "Martat", "kind": "organization"}\n'
        "not json\n",
        encoding="utf-8",
    )
    with pytest.raises(CorpusError, match="line 2"):
        list(read_mentions_jsonl(path, on_error="fail"))
    kept = list(read_mentions_jsonl(path, on_error="skip"))
    assert len(kept) == 1 and kept[0].surface == "Martat"
