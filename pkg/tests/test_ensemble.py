import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from entilabel.corpus import EntityRecord
from entilabel.ensemble import (
    FALLBACK_PLURALITY,
    VOTE_FAILED,
    VOTE_FALLBACK,
    VOTE_RESOLVED,
    VOTE_UNRESOLVED,
    CandidatePrompt,
    DesignError,
    EnsembleConfig,
    EnsembleError,
    build_error_feedback,
    evaluate_candidates,
    make_split_design,
    read_design_json,
    self_ensemble,
    vote,
    write_design_json,
)
from entilabel.gateway import (
    CompletionResult,
    GenerationParams,
    build_annotation_template,
    format_answer,
)

from datagen import QUESTION_IDS, random_dataset
from oracles import brute_check_split_design, brute_pair_balance, brute_vote

PARAMS = GenerationParams(model_name="m", endpoint_url="http://invalid.test")

ANSWER = {
    "q1": frozenset({"Political"}),
    "q2": frozenset({"Large group"}),
    "q3": frozenset({"Occasional"}),
    "q4": frozenset({"Stationary"}),
}


def config_of(m, threshold=None, fallback="flag_unresolved"):
    return EnsembleConfig(
        members=tuple(("orig", i) for i in range(m)),
        vote_threshold=threshold,
        fallback=fallback,
    )


def runs_with_q2(*label_sets):
    return [
        None if labels is None else {"q2": frozenset(labels)} for labels in label_sets
    ]


# --- vote -------------------------------------------------------------------


def test_default_threshold_is_ceil_half():
    assert config_of(7).threshold == 4
    assert config_of(1).threshold == 1
    assert config_of(6).threshold == 3


def test_vote_four_of_seven_included():
    runs = runs_with_q2(*[["Large group"]] * 4, *[["Alone"]] * 3)
    result = vote(runs, "q2", config_of(7))
    assert result.labels == frozenset({"Large group"})
    assert result.status == VOTE_RESOLVED


def test_vote_three_of_seven_excluded_then_plurality():
    runs = runs_with_q2(*[["Large group"]] * 3, ["Alone"], ["Small group"],
                        ["Not definable"], ["Data error"])
    flagged = vote(runs, "q2", config_of(7))
    assert flagged.labels == frozenset() and flagged.status == VOTE_UNRESOLVED
    plural = vote(runs, "q2", config_of(7, fallback=FALLBACK_PLURALITY))
    assert plural.labels == frozenset({"Large group"})
    assert plural.status == VOTE_FALLBACK


def test_vote_all_failed():
    result = vote([None] * 7, "q2", config_of(7))
    assert result.failed and result.status == VOTE_FAILED


def test_vote_too_few_successes_is_flagged():
    runs = runs_with_q2(["Large group"], *[None] * 6)
    result = vote(runs, "q2", config_of(7))
    assert result.status == VOTE_UNRESOLVED
    plural = vote(runs, "q2", config_of(7, fallback=FALLBACK_PLURALITY))
    assert plural.labels == frozenset({"Large group"})


def test_vote_plurality_returns_all_tied_labels():
    runs = runs_with_q2(["Large group"], ["Alone"], ["Large group"], ["Alone"],
                        ["Small group"], None, None)
    result = vote(runs, "q2", config_of(7, fallback=FALLBACK_PLURALITY))
    assert result.labels == frozenset({"Large group", "Alone"})


def test_vote_single_run_identity():
    runs = [dict(ANSWER)]
    result = vote(runs, "q2", config_of(1))
    assert result.labels == ANSWER["q2"] and result.status == VOTE_RESOLVED


def test_vote_permutation_invariant():
    base = runs_with_q2(["Large group"], ["Large group"], ["Alone"], None,
                        ["Large group", "Alone"])
    expected = vote(base, "q2", config_of(5))
    for perm in itertools.permutations(base):
        assert vote(list(perm), "q2", config_of(5)).labels == expected.labels


def test_vote_length_mismatch_rejected():
    with pytest.raises(EnsembleError, match="expected"):
        vote([ANSWER], "q2", config_of(2))


def test_vote_matches_brute_tally_on_random_runs():
    rng = random.Random(5)
    options = ["Alone", "Small group", "Large group", "Not definable"]
    for _ in range(200):
        m = rng.randint(1, 9)
        runs = []
        for _ in range(m):
            if rng.random() < 0.15:
                runs.append(None)
            else:
                runs.append({"q2": frozenset(rng.sample(options, rng.randint(1, 3)))})
        for fallback in ("flag_unresolved", "plurality"):
            config = config_of(m, fallback=fallback)
            expected_labels, expected_flag = brute_vote(
                [None if r is None else set(r["q2"]) for r in runs],
                config.threshold,
                fallback,
            )
            result = vote(runs, "q2", config)
            assert set(result.labels) == expected_labels
            assert result.status == expected_flag


def test_config_validation():
    with pytest.raises(EnsembleError):
        EnsembleConfig(members=())
    with pytest.raises(EnsembleError):
        config_of(3, threshold=4)
    with pytest.raises(EnsembleError):
        EnsembleConfig(members=(("t", 0),), fallback="wat")


# --- self ensemble -----------------------------------------------------------


def _deterministic_transport(schema):
    def send(params, prompt, user_tag=None):
        surface = prompt.split('Entity to be annotated\n\n"')[1].split('"')[0]
        return CompletionResult(
            text=format_answer(surface, {q: sorted(v) for q, v in ANSWER.items()})
        )
    return send


def test_self_ensemble_of_identical_runs_equals_single(schema):
    e = EntityRecord("o000001", "seura", "organization", 1)
    template = build_annotation_template(schema)
    votes, records = self_ensemble(
        e, template, 7, PARAMS, schema, transport=_deterministic_transport(schema)
    )
    assert len(records) == 7
    assert {r.run_index for r in records} == set(range(7))
    for qid in QUESTION_IDS:
        assert votes[qid].labels == ANSWER[qid]


def test_self_ensemble_one_dissenter(schema):
    e = EntityRecord("o000001", "seura", "organization", 1)
    template = build_annotation_template(schema)
    calls = []

    def send(params, prompt, user_tag=None):
        calls.append(user_tag)
        answers = {q: sorted(v) for q, v in ANSWER.items()}
        if user_tag.startswith(f"{template.template_id}|3|"):
            answers["q2"] = ["Alone"]
        return CompletionResult(text=format_answer("seura", answers))

    votes, _ = self_ensemble(e, template, 7, PARAMS, schema, transport=send)
    assert votes["q2"].labels == frozenset({"Large group"})
    assert votes["q2"].tally == {"Large group": 6, "Alone": 1}


# --- split design ------------------------------------------------------------


def test_reference_design_shape():
    ids = [f"e{i:03d}" for i in range(50)]
    design = make_split_design(ids, k_splits=5, opt_size=20, eval_size=30, seed=3)
    membership = {e: set(s) for e, s in design.membership.items()}
    brute_check_split_design(membership, 50, 5, 20, 30)
    pairs = brute_pair_balance(membership, 5)
    assert len(pairs) == 10 and set(pairs.values()) == {5}
    for split in range(5):
        assert len(design.opt_set(split)) == 20
        assert len(design.eval_set(split)) == 30


def test_small_balanced_design():
    ids = [f"e{i}" for i in range(10)]
    design = make_split_design(ids, k_splits=5, opt_size=4, eval_size=6, seed=1)
    membership = {e: set(s) for e, s in design.membership.items()}
    brute_check_split_design(membership, 10, 5, 4, 6)
    pairs = brute_pair_balance(membership, 5)
    assert set(pairs.values()) == {1}


def test_design_infeasible_rejected():
    ids = [f"e{i}" for i in range(50)]
    with pytest.raises(DesignError, match="not divisible"):
        make_split_design(ids, k_splits=5, opt_size=21, eval_size=29, seed=0)
    with pytest.raises(DesignError, match="must equal n"):
        make_split_design(ids, k_splits=5, opt_size=20, eval_size=25, seed=0)
    with pytest.raises(DesignError, match="duplicate"):
        make_split_design(["a", "a"], k_splits=2, opt_size=1, eval_size=1, seed=0)


def test_design_deterministic_and_seed_sensitive():
    ids = [f"e{i:03d}" for i in range(50)]
    one = make_split_design(ids, seed=9)
    two = make_split_design(ids, seed=9)
    other = make_split_design(ids, seed=10)
    assert one.membership == two.membership
    assert one.membership != other.membership


def test_design_greedy_path_when_combinations_do_not_divide():
    # n=12, k=4, opt=6 -> per-entity 2, C(4,2)=6 combos, 12 % 6 == 0 uses the
    # balanced path; n=9, k=3, opt=6 -> per-entity 2, C(3,2)=3, 9 % 3 == 0.
    # Force the greedy path with n=8, k=4, opt=4 -> per-entity 2, C(4,2)=6.
    ids = [f"e{i}" for i in range(8)]
    design = make_split_design(ids, k_splits=4, opt_size=4, eval_size=4, seed=2)
    membership = {e: set(s) for e, s in design.membership.items()}
    brute_check_split_design(membership, 8, 4, 4, 4)


def test_design_json_roundtrip(tmp_path):
    ids = [f"e{i:03d}" for i in range(50)]
    design = make_split_design(ids, seed=4)
    path = tmp_path / "design.json"
    write_design_json(design, path)
    loaded = read_design_json(path)
    assert loaded.membership == dict(design.membership)
    assert loaded.opt_size == 20


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_design_invariants_random_seeds(seed):
    ids = [f"e{i:03d}" for i in range(50)]
    design = make_split_design(ids, seed=seed)
    membership = {e: set(s) for e, s in design.membership.items()}
    brute_check_split_design(membership, 50, 5, 20, 30)


# --- error feedback ------------------------------------------------------------


def fixture_entities(n):
    return [EntityRecord(f"e{i:03d}", f"entity {i:03d}", "hobby", 1) for i in range(n)]


def test_feedback_zero_errors(schema):
    entities = fixture_entities(20)
    gold = {e.entity_id: dict(ANSWER) for e in entities}
    runs = {e.entity_id: dict(ANSWER) for e in entities}
    template = build_annotation_template(schema)
    document = build_error_feedback(template, entities, runs, gold, schema)
    assert "entities with errors: 0" in document
    assert "No errors" in document
    assert template.body in document


def test_feedback_single_q4_error(schema):
    entities = fixture_entities(3)
    gold = {e.entity_id: dict(ANSWER) for e in entities}
    runs = {e.entity_id: dict(ANSWER) for e in entities}
    runs["e001"] = dict(ANSWER, q4=frozenset({"Light"}))
    document = build_error_feedback(
        build_annotation_template(schema), entities, runs, gold, schema
    )
    assert "entities with errors: 1" in document
    assert "q4: missing Stationary; spurious Light" in document
    assert "q1:" not in document.split("model q1")[0]  # diff section names only q4


def test_feedback_five_seeded_errors(schema):
    rng = random.Random(8)
    entities = fixture_entities(20)
    gold = {e.entity_id: dict(ANSWER) for e in entities}
    runs = {e.entity_id: dict(ANSWER) for e in entities}
    spoiled = rng.sample([e.entity_id for e in entities], 5)
    for eid in spoiled:
        runs[eid] = dict(ANSWER, q2=frozenset({"Alone"}))
    document = build_error_feedback(
        build_annotation_template(schema), entities, runs, gold, schema
    )
    assert "entities with errors: 5" in document
    assert document.count('Entity: "') == 5


def test_feedback_missing_runs_rejected(schema):
    entities = fixture_entities(2)
    gold = {e.entity_id: dict(ANSWER) for e in entities}
    with pytest.raises(EnsembleError, match="missing runs"):
        build_error_feedback(
            build_annotation_template(schema), entities, {}, gold, schema
        )


# --- candidate evaluation --------------------------------------------------------


def _design_and_gold(seed=0):
    ids = [f"e{i:03d}" for i in range(50)]
    design = make_split_design(ids, seed=seed)
    rng = random.Random(seed)
    _, data = random_dataset(seed, n_entities=0)
    gold = {}
    for e in ids:
        gold[e] = {
            "q1": {"Political"}, "q2": {"Large group"},
            "q3": {"Occasional"}, "q4": {"Stationary"},
        }
    return ids, design, gold


def test_candidate_equal_to_parent_not_improved(schema):
    ids, design, gold = _design_and_gold()
    predictions = {"orig": {e: dict(ANSWER) for e in ids}}
    predictions["cand"] = predictions["orig"]
    ranked, winners = evaluate_candidates(
        [CandidatePrompt("cand", "orig", split_index=0)],
        design, gold, predictions, schema,
    )
    assert ranked[0].improved is False
    assert winners == []


def test_candidate_fixing_one_error_improves(schema):
    ids, design, gold = _design_and_gold()
    eval_ids = sorted(design.eval_set(0))
    parent = {e: dict(ANSWER) for e in ids}
    parent[eval_ids[0]] = dict(ANSWER, q2=frozenset({"Alone"}))  # one parent error
    candidate = {e: dict(ANSWER) for e in ids}
    predictions = {"orig": parent, "cand": candidate}
    ranked, winners = evaluate_candidates(
        [CandidatePrompt("cand", "orig", split_index=0)],
        design, gold, predictions, schema,
    )
    assert ranked[0].improved is True
    assert len(winners) == 1
    assert ranked[0].eval_f1 > ranked[0].parent_f1


def test_twenty_candidates_seven_winners(schema):
    ids, design, gold = _design_and_gold()
    parent = {e: dict(ANSWER, q2=frozenset({"Alone"})) for e in ids}  # all wrong on q2
    predictions = {"orig": parent}
    candidates = []
    for i in range(20):
        template_id = f"cand{i:02d}"
        improved = i < 7
        predictions[template_id] = {
            e: dict(ANSWER) if improved else dict(parent[e]) for e in ids
        }
        candidates.append(
            CandidatePrompt(template_id, "orig", split_index=i % 5)
        )
    ranked, winners = evaluate_candidates(candidates, design, gold, predictions, schema)
    assert len(ranked) == 20
    assert len(winners) == 7
    assert {c.template_id for c in winners} == {f"cand{i:02d}" for i in range(7)}


def test_missing_predictions_rejected(schema):
    ids, design, gold = _design_and_gold()
    with pytest.raises(EnsembleError, match="missing predictions"):
        evaluate_candidates(
            [CandidatePrompt("ghost", "orig", split_index=0)],
            design, gold, {"orig": {e: dict(ANSWER) for e in ids}}, schema,
        )
