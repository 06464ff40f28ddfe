"""Deterministic scripted mock of an OpenAI-compatible chat-completions endpoint.

The mock answers annotation and hierarchy-extraction prompts with behaviors
chosen per request: canned text, per-attempt sequences, per-entity overrides,
or seeded failure rates (malformed JSON, empty body, hallucinated option,
wrong entity key, HTTP 500, delay). Randomness is keyed by
(seed, entity, template, run, attempt) rather than by arrival order, so runs
are reproducible under any client concurrency. Ships in the CLI as
``mock-llm`` so pipelines can be dry-run end to end without any model.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Mapping

from .gateway import format_answer
from .schema import ClassificationSchema, reference_schema
from .util import stable_uniform

BEHAVIOR_VALID = "valid"
BEHAVIOR_MALFORMED = "malformed"
BEHAVIOR_EMPTY = "empty"
BEHAVIOR_UNKNOWN_OPTION = "unknown_option"
BEHAVIOR_WRONG_KEY = "wrong_key"
BEHAVIOR_HTTP_500 = "http_500"

_RATE_BEHAVIORS = (
    ("malformed_rate", BEHAVIOR_MALFORMED),
    ("empty_rate", BEHAVIOR_EMPTY),
    ("unknown_option_rate", BEHAVIOR_UNKNOWN_OPTION),
    ("wrong_key_rate", BEHAVIOR_WRONG_KEY),
    ("http_500_rate", BEHAVIOR_HTTP_500),
)

_ENTITY_RE = re.compile(r'Entity to be annotated\s*\n+\s*"([^"\n]*)"')
_HALLUCINATED_LABEL = "Imaginary pursuit"


class MockScriptError(ValueError):
    pass


@dataclass
class MockScript:
    seed: int = 0
    malformed_rate: float = 0.0
    empty_rate: float = 0.0
    unknown_option_rate: float = 0.0
    wrong_key_rate: float = 0.0
    http_500_rate: float = 0.0
    delay_ms: int = 0
    answers: dict[str, dict[str, list[str]]] = field(default_factory=dict)
    sequences: dict[str, list[str]] = field(default_factory=dict)
    overrides: dict[str, str] = field(default_factory=dict)
    canned: dict[str, str] = field(default_factory=dict)
    hierarchy: dict[str, dict] = field(default_factory=dict)
    schema: ClassificationSchema | None = None

    def __post_init__(self) -> None:
        total = sum(getattr(self, rate) for rate, _ in _RATE_BEHAVIORS)
        if total > 1.0 + 1e-9:
            raise MockScriptError(f"failure rates sum to {total}, must be <= 1")
        known = {b for _, b in _RATE_BEHAVIORS} | {BEHAVIOR_VALID}
        for surface, behaviors in self.sequences.items():
            for behavior in behaviors:
                if behavior not in known:
                    raise MockScriptError(f"{surface!r}: unknown behavior {behavior!r}")
        for surface, behavior in self.overrides.items():
            if behavior not in known:
                raise MockScriptError(f"{surface!r}: unknown behavior {behavior!r}")

    @classmethod
    def from_dict(cls, raw: Mapping, base_dir: Path | None = None) -> "MockScript":
        raw = dict(raw)
        answers = dict(raw.get("answers", {}))
        answers_path = raw.get("answers_path")
        if answers_path:
            path = Path(answers_path)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            with open(path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    row = json.loads(line)
                    surface = row.pop("surface")
                    answers[surface] = {
                        qid: labels
                        for qid, labels in row.items()
                        if isinstance(labels, list)
                    }
        return cls(
            seed=int(raw.get("seed", 0)),
            malformed_rate=float(raw.get("malformed_rate", 0.0)),
            empty_rate=float(raw.get("empty_rate", 0.0)),
            unknown_option_rate=float(raw.get("unknown_option_rate", 0.0)),
            wrong_key_rate=float(raw.get("wrong_key_rate", 0.0)),
            http_500_rate=float(raw.get("http_500_rate", 0.0)),
            delay_ms=int(raw.get("delay_ms", 0)),
            answers=answers,
            sequences={k: list(v) for k, v in raw.get("sequences", {}).items()},
            overrides=dict(raw.get("overrides", {})),
            canned=dict(raw.get("canned", {})),
            hierarchy=dict(raw.get("hierarchy", {})),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "MockScript":
        path = Path(path)
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise MockScriptError(f"cannot read mock script {path}: {exc}") from exc
        return cls.from_dict(raw, base_dir=path.parent)


def extract_entity_surface(prompt: str) -> str | None:
    match = _ENTITY_RE.search(prompt)
    return match.group(1) if match else None


def behavior_for(
    script: MockScript, entity: str, attempt_index: int, request_key: str
) -> str:
    """Resolve the behavior for one request; seeded draws key on request_key."""
    if entity in script.sequences:
        seq = script.sequences[entity]
        return seq[min(attempt_index, len(seq) - 1)]
    if entity in script.overrides:
        return script.overrides[entity]
    u = stable_uniform(script.seed, entity, request_key)
    cumulative = 0.0
    for rate_name, behavior in _RATE_BEHAVIORS:
        cumulative += getattr(script, rate_name)
        if u < cumulative:
            return behavior
    return BEHAVIOR_VALID


def valid_answers_for(script: MockScript, entity: str) -> dict[str, list[str]]:
    if entity in script.answers:
        return script.answers[entity]
    # Unscripted entity: fabricate a deterministic single-label answer.
    schema = script.schema or reference_schema()
    if script.schema is None:
        script.schema = schema
    answers = {}
    for question in schema.questions:
        names = [
            o.canonical_name for o in question.options if o.sentinel == "none"
        ]
        pick = int(stable_uniform(script.seed, "fabricate", entity, question.id) * len(names))
        answers[question.id] = [names[pick]]
    return answers


def response_text(script: MockScript, entity: str, behavior: str, prompt: str) -> str:
    hierarchy_mode = '"base"' in prompt and '"q1"' not in prompt
    if behavior == BEHAVIOR_EMPTY:
        return ""
    if hierarchy_mode:
        parts = script.hierarchy.get(
            entity, {"role": "", "hierarchy": "", "base": entity}
        )
        text = json.dumps(
            {
                "role": parts.get("role", "") or "",
                "hierarchy": parts.get("hierarchy", "") or "",
                "base": parts.get("base", entity) or entity,
            },
            ensure_ascii=False,
        )
        if behavior == BEHAVIOR_MALFORMED:
            return f"[Answer begin]\n{text[: max(4, len(text) // 2)]}"
        return f"[Answer begin]\n{text}\n[Answer end]"
    answers = valid_answers_for(script, entity)
    if behavior == BEHAVIOR_VALID:
        return format_answer(entity, answers)
    if behavior == BEHAVIOR_WRONG_KEY:
        return format_answer(f"NOT {entity} AT ALL", answers)
    if behavior == BEHAVIOR_UNKNOWN_OPTION:
        polluted = {qid: list(labels) for qid, labels in answers.items()}
        first = sorted(polluted)[0]
        polluted[first] = [_HALLUCINATED_LABEL]
        return format_answer(entity, polluted)
    if behavior == BEHAVIOR_MALFORMED:
        text = format_answer(entity, answers, markers=False)
        return f"[Answer begin]\n{text[: max(4, len(text) // 2)]}"
    raise MockScriptError(f"unhandled behavior {behavior!r}")


class MockLLMHandler(BaseHTTPRequestHandler):
    server: "MockLLMServer"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass

    def do_GET(self) -> None:
        if self.path == "/health":
            self._send(200, {"status": "ok", "requests": self.server.request_count})
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self) -> None:
        if self.path not in ("/v1/chat/completions", "/chat/completions"):
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
            prompt = payload["messages"][-1]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            self._send(400, {"error": "bad request body"})
            return
        script = self.server.script
        entity = extract_entity_surface(prompt)
        if entity is None:
            self._send(400, {"error": "no entity found in prompt"})
            return
        user_tag = payload.get("user")
        if isinstance(user_tag, str) and user_tag.count("|") == 2:
            request_key = user_tag
            attempt_index = int(user_tag.rsplit("|", 1)[1])
        else:
            # Untagged client: fall back to a per-entity arrival counter,
            # deterministic as long as the entity's requests are sequential.
            attempt_index = self.server.next_ordinal(entity)
            request_key = f"ordinal|{attempt_index}"
        behavior = behavior_for(script, entity, attempt_index, request_key)
        if script.delay_ms:
            time.sleep(script.delay_ms / 1000.0)
        self.server.count_request(behavior)
        if behavior == BEHAVIOR_HTTP_500:
            self._send(500, {"error": "scripted server error"})
            return
        text = response_text(script, entity, behavior, prompt)
        completion = {
            "id": f"mock-{self.server.request_count}",
            "object": "chat.completion",
            "model": payload.get("model", "mock"),
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": len(prompt.split()),
                "completion_tokens": len(text.split()),
                "total_tokens": len(prompt.split()) + len(text.split()),
            },
        }
        self._send(200, completion)

    def _send(self, status: int, body: dict) -> None:
        data = json.dumps(body, ensure_ascii=False).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class MockLLMServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, script: MockScript, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), MockLLMHandler)
        self.script = script
        self.request_count = 0
        self.behavior_counts: dict[str, int] = {}
        self._ordinals: dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def count_request(self, behavior: str) -> None:
        with self._lock:
            self.request_count += 1
            self.behavior_counts[behavior] = self.behavior_counts.get(behavior, 0) + 1

    def next_ordinal(self, entity: str) -> int:
        with self._lock:
            ordinal = self._ordinals.get(entity, 0)
            self._ordinals[entity] = ordinal + 1
            return ordinal


def start_mock_server(
    script: MockScript, host: str = "127.0.0.1", port: int = 0
) -> tuple[MockLLMServer, threading.Thread]:
    server = MockLLMServer(script, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
