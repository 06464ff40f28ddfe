import hashlib
import json

import pytest
import requests

from entilabel.corpus import EntityRecord
from entilabel.gateway import (
    OUTCOME_HTTP_STATUS,
    OUTCOME_TIMEOUT,
    GenerationParams,
    TransportError,
    annotate_entity,
    build_annotation_template,
    complete,
    extract_hierarchy,
    render,
)
from entilabel.mockllm import (
    MockScript,
    MockScriptError,
    behavior_for,
    extract_entity_surface,
    start_mock_server,
)

ANSWER = {
    "q1": ["Creative/Artistic"],
    "q2": ["Large group"],
    "q3": ["Regular"],
    "q4": ["Stationary"],
}


def replay_uniform(*parts):
    """Independent reimplementation of the mock's seeded draw."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") / 2**64


@pytest.fixture()
def mock_factory():
    servers = []

    def start(script):
        server, _ = start_mock_server(script)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.shutdown()


def params_for(server, timeout=10.0):
    return GenerationParams(model_name="mock", endpoint_url=server.url, timeout_s=timeout)


def entity(surface="kirkkokuoro", eid="o000001"):
    return EntityRecord(entity_id=eid, surface=surface, kind="organization", mention_count=2)


def test_extract_entity_surface(schema):
    template = build_annotation_template(schema)
    prompt = render(template, "laulukuoro")
    assert extract_entity_surface(prompt) == "laulukuoro"


def test_canned_valid_answer(schema, mock_factory):
    server = mock_factory(MockScript(answers={"kirkkokuoro": ANSWER}))
    result = complete(params_for(server), render(build_annotation_template(schema), "kirkkokuoro"))
    assert '"kirkkokuoro"' in result.text
    assert result.prompt_tokens > 0 and result.completion_tokens > 0


def test_http_500_surfaces_as_transport_error(schema, mock_factory):
    server = mock_factory(MockScript(overrides={"kirkkokuoro": "http_500"}))
    with pytest.raises(TransportError) as err:
        complete(params_for(server), render(build_annotation_template(schema), "kirkkokuoro"))
    assert err.value.outcome == OUTCOME_HTTP_STATUS


def test_delay_triggers_timeout(schema, mock_factory):
    server = mock_factory(MockScript(delay_ms=500))
    with pytest.raises(TransportError) as err:
        complete(params_for(server, timeout=0.1),
                 render(build_annotation_template(schema), "kirkkokuoro"))
    assert err.value.outcome == OUTCOME_TIMEOUT


def test_sequence_fail_fail_valid(schema, mock_factory):
    script = MockScript(
        sequences={"kirkkokuoro": ["malformed", "malformed", "valid"]},
        answers={"kirkkokuoro": ANSWER},
    )
    server = mock_factory(script)
    record = annotate_entity(
        params_for(server), build_annotation_template(schema), entity(), schema
    )
    assert record.attempt_count == 3
    assert not record.failed


def test_always_valid_pipeline_is_single_attempt(schema, mock_factory):
    server = mock_factory(MockScript(answers={"kirkkokuoro": ANSWER}))
    record = annotate_entity(
        params_for(server), build_annotation_template(schema), entity(), schema
    )
    assert record.attempt_count == 1
    assert {q: sorted(v) for q, v in record.parsed.items()} == ANSWER


def test_unknown_option_and_wrong_key_behaviors(schema, mock_factory):
    script = MockScript(
        overrides={"alpha": "unknown_option", "beta": "wrong_key"},
        answers={"alpha": ANSWER, "beta": ANSWER},
    )
    server = mock_factory(script)
    rec_a = annotate_entity(
        params_for(server), build_annotation_template(schema),
        entity("alpha", "o000010"), schema, max_attempts=1,
    )
    assert rec_a.attempts[0].outcome == "unknown_option"
    rec_b = annotate_entity(
        params_for(server), build_annotation_template(schema),
        entity("beta", "o000011"), schema, max_attempts=1,
    )
    assert rec_b.attempts[0].outcome == "entity_key_mismatch"


def test_fabricated_answer_for_unscripted_entity(schema, mock_factory):
    server = mock_factory(MockScript(seed=7))
    record = annotate_entity(
        params_for(server), build_annotation_template(schema), entity("uusi seura"), schema
    )
    assert not record.failed
    assert all(len(v) == 1 for v in record.parsed.values())


def test_hierarchy_mode(schema, mock_factory):
    script = MockScript(
        hierarchy={
            "Chairman of the Club": {"role": "Chairman", "hierarchy": "", "base": "Club"}
        }
    )
    server = mock_factory(script)
    result = extract_hierarchy(params_for(server), entity("Chairman of the Club"))
    assert result.split.role == "Chairman"
    assert result.split.base_surface == "Club"


def test_behavior_draw_is_deterministic_and_matches_replay():
    script = MockScript(seed=42, malformed_rate=0.1)
    for i in range(200):
        surface = f"entity {i}"
        tag = f"orig|0|{i % 5}"
        expected = "malformed" if replay_uniform(42, surface, tag) < 0.1 else "valid"
        assert behavior_for(script, surface, i % 5, tag) == expected
        assert behavior_for(script, surface, i % 5, tag) == expected  # stable


def test_taxonomy_counts_match_replay_oracle(schema, mock_factory):
    """10% malformed, seed 42: observed outcome counts equal the seeded draw."""
    script = MockScript(seed=42, malformed_rate=0.1)
    server = mock_factory(script)
    template = build_annotation_template(schema)
    entities = [entity(f"seura {i:03d}", f"o{i:06d}") for i in range(60)]
    records = [
        annotate_entity(params_for(server), template, e, schema) for e in entities
    ]
    observed_malformed = sum(
        1 for r in records for a in r.attempts if a.outcome == "malformed_json"
    )
    expected_malformed = 0
    for e in entities:
        for attempt in range(5):
            tag = f"{template.template_id}|0|{attempt}"
            if replay_uniform(42, e.surface, tag) < 0.1:
                expected_malformed += 1
            else:
                break
    assert observed_malformed == expected_malformed
    assert server.behavior_counts.get("malformed", 0) == expected_malformed


def test_rates_must_not_exceed_one():
    with pytest.raises(MockScriptError, match="rates sum"):
        MockScript(malformed_rate=0.9, empty_rate=0.2)


def test_unknown_behavior_rejected():
    with pytest.raises(MockScriptError, match="unknown behavior"):
        MockScript(overrides={"x": "explode"})


def test_script_file_loading(tmp_path):
    answers_path = tmp_path / "answers.jsonl"
    answers_path.write_text(
        json.dumps({"surface": "kirkkokuoro", **ANSWER}) + "\n", encoding="utf-8"
    )
    script_path = tmp_path / "script.json"
    script_path.write_text(
        json.dumps({"seed": 3, "malformed_rate": 0.05, "answers_path": "answers.jsonl"}),
        encoding="utf-8",
    )
    script = MockScript.from_file(script_path)
    assert script.seed == 3
    assert script.answers["kirkkokuoro"]["q2"] == ["Large group"]


def test_health_endpoint(mock_factory):
    server = mock_factory(MockScript())
    response = requests.get(server.url + "/health", timeout=5)
    assert response.status_code == 200
