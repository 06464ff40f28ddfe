"""LLM annotation gateway: prompt rendering, chat-completions calls, strict parsing.

Responses must carry the answer between ``[Answer begin]`` / ``[Answer end]``
markers as a JSON object keyed by the entity name. Parsing is lenient about
missing markers when exactly one JSON object is present (disable with
``strict_markers=True``) and about entity-key casing/whitespace, and strict
about everything else; every failure is classified so retries and reports can
distinguish malformed JSON, empty responses, hallucinated options, and
entity-key mismatches. Transport problems (connection, HTTP status, timeout)
are classified separately but share the same attempt budget.

Completed attempt sequences are cached by (template, entity, params,
run_index); a cache hit never issues a network request.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import requests

from .corpus import EntityRecord, HierarchySplit, normalize_surface
from .schema import (
    ClassificationSchema,
    LabelValidationError,
    canon_key,
    validate_labels,
)

log = logging.getLogger(__name__)

ANSWER_BEGIN = "[Answer begin]"
ANSWER_END = "[Answer end]"

MODE_ALL_FOUR = "all_four_questions"
MODE_SINGLE = "single_question"
MODE_HIERARCHY = "hierarchy_extraction"

OUTCOME_OK = "ok"
OUTCOME_MALFORMED = "malformed_json"
OUTCOME_EMPTY = "empty_response"
OUTCOME_UNKNOWN_OPTION = "unknown_option"
OUTCOME_KEY_MISMATCH = "entity_key_mismatch"
OUTCOME_TRANSPORT = "transport_error"
OUTCOME_HTTP_STATUS = "http_status"
OUTCOME_TIMEOUT = "timeout"

PARSE_OUTCOMES = (
    OUTCOME_MALFORMED,
    OUTCOME_EMPTY,
    OUTCOME_UNKNOWN_OPTION,
    OUTCOME_KEY_MISMATCH,
)
TRANSPORT_OUTCOMES = (OUTCOME_TRANSPORT, OUTCOME_HTTP_STATUS, OUTCOME_TIMEOUT)


class RenderError(ValueError):
    """Template placeholder missing, duplicated, or unresolved."""


class AnswerParseError(ValueError):
    def __init__(self, outcome: str, detail: str = ""):
        super().__init__(f"{outcome}: {detail}" if detail else outcome)
        self.outcome = outcome
        self.detail = detail


class TransportError(RuntimeError):
    def __init__(self, outcome: str, detail: str = ""):
        super().__init__(f"{outcome}: {detail}" if detail else outcome)
        self.outcome = outcome
        self.detail = detail


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    mode: str = MODE_ALL_FOUR
    question_id: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in (MODE_ALL_FOUR, MODE_SINGLE, MODE_HIERARCHY):
            raise RenderError(f"unknown template mode {self.mode!r}")
        if self.mode == MODE_SINGLE and not self.question_id:
            raise RenderError("single-question template needs a question_id")
        required = (
            ("entity_name",)
            if self.mode == MODE_HIERARCHY
            else ("entity_name", "hierarchies", "past_mistakes")
        )
        counts = _placeholder_counts(self.body)
        for name in required:
            if counts.get(name, 0) != 1:
                raise RenderError(
                    f"template {self.template_id}: placeholder {{{name}}} must "
                    f"appear exactly once, found {counts.get(name, 0)}"
                )
        for name in counts:
            if name not in ("entity_name", "hierarchies", "past_mistakes"):
                raise RenderError(
                    f"template {self.template_id}: unknown placeholder {{{name}}}"
                )
            if self.mode == MODE_HIERARCHY and name != "entity_name":
                raise RenderError(
                    f"template {self.template_id}: {{{name}}} not allowed in "
                    "hierarchy-extraction templates"
                )


_TOKEN = re.compile(r"\{\{|\}\}|\{([a-zA-Z_][a-zA-Z0-9_]*)\}")


def _placeholder_counts(body: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for match in _TOKEN.finditer(body):
        name = match.group(1)
        if name is not None:
            counts[name] = counts.get(name, 0) + 1
    return counts


def render(
    template: PromptTemplate,
    entity_surface: str,
    hierarchy_text: str | None = None,
    past_mistakes_text: str = "",
) -> str:
    """Substitute placeholders; ``{{``/``}}`` unescape to literal braces.

    An absent hierarchy renders as "UNK" so downstream instructions can tell
    the model to ignore it.
    """
    if not entity_surface.strip():
        raise RenderError("entity surface is empty")
    values = {
        "entity_name": entity_surface,
        "hierarchies": hierarchy_text if hierarchy_text else "UNK",
        "past_mistakes": past_mistakes_text or "",
    }
    out: list[str] = []
    pos = 0
    for match in _TOKEN.finditer(template.body):
        out.append(template.body[pos:match.start()])
        pos = match.end()
        token = match.group(0)
        if token == "{{":
            out.append("{")
        elif token == "}}":
            out.append("}")
        else:
            name = match.group(1)
            if name not in values:
                raise RenderError(f"unresolved placeholder {{{name}}}")
            out.append(values[name])
    out.append(template.body[pos:])
    return "".join(out)


def build_annotation_template(
    schema: ClassificationSchema,
    template_id: str = "orig",
    mode: str = MODE_ALL_FOUR,
    question_id: str | None = None,
    extra_guidelines: str = "",
) -> PromptTemplate:
    """Compose the default annotation prompt from the schema itself.

    Humans and the model read the same option names and descriptions; the
    prompt is generated rather than hand-maintained so the two can never
    drift apart.
    """
    questions = (
        [schema.question(question_id)] if mode == MODE_SINGLE else list(schema.questions)
    )
    parts = [
        "### TASK",
        "",
        "Classify the entity given at the end of this prompt by answering the "
        "question(s) below. For every question, select the option or options "
        "that most accurately fit the entity, then write your answer exactly "
        "in the ANSWER FORMAT shown.",
        "",
        "## QUESTIONS AND OPTIONS",
        "",
    ]
    for question in questions:
        parts.append(f"### {question.id} - {question.title} (select all that apply)")
        parts.append("")
        parts.append("| Option | Description |")
        parts.append("|--------|-------------|")
        for option in question.options:
            parts.append(f"| {option.canonical_name} | {option.description} |")
        parts.append("")
    parts += [
        "## GUIDELINES",
        "",
        "- Prefer accuracy over coverage: when the judgment cannot be made from "
        "the name and context, choose \"Not definable\" instead of guessing.",
        "- If the entity is not actually an organization or hobby but an "
        "extraction artifact, answer \"Data error\" for all questions.",
        "- The hierarchy line gives the organizational context the entity was "
        "mentioned in. If it is empty or UNK, you can ignore it.",
        "- Use only the option names listed above, spelled exactly as given.",
        "",
    ]
    if extra_guidelines:
        parts += [extra_guidelines.rstrip(), ""]
    answer_keys = ",\n".join(f'    "{q.id}": [...]' for q in questions)
    parts += [
        "#### ANSWER FORMAT",
        "",
        ANSWER_BEGIN,
        "{{",
        '  "{{entity_name}}": {{',
        answer_keys,
        "  }}",
        "}}",
        ANSWER_END,
        "",
        "#### Entity to be annotated",
        "",
        '"{entity_name}"',
        "",
        'Hierarchy: "{hierarchies}"',
        "",
        '"{past_mistakes}"',
        "",
    ]
    return PromptTemplate(
        template_id=template_id,
        body="\n".join(parts),
        mode=mode,
        question_id=question_id if mode == MODE_SINGLE else None,
    )


def build_hierarchy_template(template_id: str = "hierarchy") -> PromptTemplate:
    body = "\n".join(
        [
            "### TASK",
            "",
            "The name below may describe a person's role inside an organization "
            "or a sub-unit of a larger organization. Separate the role and the "
            "organizational sub-unit from the underlying base organization.",
            "",
            "Answer with a single JSON object with the keys \"role\", "
            "\"hierarchy\" and \"base\". Use an empty string for a part that is "
            "not present; \"base\" must always carry the remaining organization "
            "name (the full name when nothing can be separated).",
            "",
            "#### ANSWER FORMAT",
            "",
            ANSWER_BEGIN,
            "{{",
            '  "role": "...",',
            '  "hierarchy": "...",',
            '  "base": "..."',
            "}}",
            ANSWER_END,
            "",
            "#### Entity to be annotated",
            "",
            '"{entity_name}"',
            "",
        ]
    )
    return PromptTemplate(template_id=template_id, body=body, mode=MODE_HIERARCHY)


def load_template_file(
    path: str | Path,
    template_id: str | None = None,
    mode: str = MODE_ALL_FOUR,
    question_id: str | None = None,
) -> PromptTemplate:
    body = Path(path).read_text(encoding="utf-8")
    return PromptTemplate(
        template_id=template_id or Path(path).stem,
        body=body,
        mode=mode,
        question_id=question_id,
    )


# ---------------------------------------------------------------------------
# wire client


@dataclass(frozen=True)
class GenerationParams:
    model_name: str
    endpoint_url: str
    temperature: float = 0.3
    top_p: float = 1.0
    top_k: int = 40
    max_tokens: int = 300
    timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")

    def fingerprint(self) -> str:
        payload = json.dumps(
            [
                self.model_name,
                self.endpoint_url,
                self.temperature,
                self.top_p,
                self.top_k,
                self.max_tokens,
            ],
            separators=(",", ":"),
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class CompletionResult:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


def _completions_url(endpoint_url: str) -> str:
    base = endpoint_url.rstrip("/")
    if base.endswith("/chat/completions"):
        return base
    return base + "/v1/chat/completions"


def complete(
    params: GenerationParams, prompt: str, user_tag: str | None = None
) -> CompletionResult:
    """Issue one chat-completions request (single user message).

    Raises ``TransportError`` with outcome ``transport_error``,
    ``http_status`` or ``timeout``; those are retried under the same budget
    as parse failures but never mistaken for them.
    """
    payload: dict = {
        "model": params.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "top_k": params.top_k,
        "max_tokens": params.max_tokens,
    }
    if user_tag:
        payload["user"] = user_tag
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get("ENTILABEL_API_KEY") or os.environ.get("OPENAI_API_KEY")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    url = _completions_url(params.endpoint_url)
    log.debug("POST %s model=%s prompt_chars=%d", url, params.model_name, len(prompt))
    try:
        response = requests.post(
            url, json=payload, headers=headers, timeout=params.timeout_s
        )
    except requests.Timeout as exc:
        raise TransportError(OUTCOME_TIMEOUT, str(exc)) from exc
    except requests.RequestException as exc:
        raise TransportError(OUTCOME_TRANSPORT, str(exc)) from exc
    if response.status_code != 200:
        raise TransportError(
            OUTCOME_HTTP_STATUS, f"status {response.status_code}: {response.text[:200]}"
        )
    try:
        body = response.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(OUTCOME_TRANSPORT, f"invalid completion payload: {exc}") from exc
    usage = body.get("usage") or {}
    log.debug("response chars=%d usage=%s", len(text or ""), usage)
    return CompletionResult(
        text=text or "",
        prompt_tokens=usage.get("prompt_tokens"),
        completion_tokens=usage.get("completion_tokens"),
    )


Transport = Callable[[GenerationParams, str, "str | None"], CompletionResult]


# ---------------------------------------------------------------------------
# answer parsing


def _find_json_objects(text: str) -> list[dict]:
    decoder = json.JSONDecoder()
    objects = []
    i = 0
    while True:
        start = text.find("{", i)
        if start < 0:
            break
        try:
            obj, end = decoder.raw_decode(text, start)
        except ValueError:
            i = start + 1
            continue
        if isinstance(obj, dict):
            objects.append(obj)
        i = max(end, start + 1)
    return objects


def _extract_answer_object(raw: str, strict_markers: bool) -> dict:
    begin = raw.find(ANSWER_BEGIN)
    if begin >= 0:
        end = raw.find(ANSWER_END, begin + len(ANSWER_BEGIN))
        span = raw[begin + len(ANSWER_BEGIN): end if end >= 0 else len(raw)]
        objects = _find_json_objects(span)
        if not objects:
            raise AnswerParseError(OUTCOME_MALFORMED, "no JSON object between answer markers")
        return objects[0]
    if strict_markers:
        raise AnswerParseError(OUTCOME_MALFORMED, "answer markers missing")
    objects = _find_json_objects(raw)
    if len(objects) != 1:
        raise AnswerParseError(
            OUTCOME_MALFORMED,
            f"answer markers missing and {len(objects)} JSON objects found",
        )
    return objects[0]


def parse_answer(
    raw: str,
    entity_surface: str,
    schema: ClassificationSchema,
    mode: str = MODE_ALL_FOUR,
    question_id: str | None = None,
    strict_markers: bool = False,
) -> dict[str, frozenset[str]]:
    """Parse and validate one model answer into per-question label sets.

    Raises ``AnswerParseError`` whose ``outcome`` is one of empty_response,
    malformed_json, entity_key_mismatch, unknown_option.
    """
    if raw is None or not raw.strip():
        raise AnswerParseError(OUTCOME_EMPTY, "blank response")
    outer = _extract_answer_object(raw, strict_markers)
    entity_key = canon_key(entity_surface)
    inner = None
    for key, value in outer.items():
        if isinstance(key, str) and canon_key(key) == entity_key:
            inner = value
            break
    if inner is None:
        raise AnswerParseError(
            OUTCOME_KEY_MISMATCH,
            f"expected key {entity_surface!r}, found {sorted(map(str, outer))!r}",
        )
    if not isinstance(inner, dict):
        raise AnswerParseError(OUTCOME_MALFORMED, "entity value is not an object")
    required = (
        [question_id] if mode == MODE_SINGLE and question_id else list(schema.question_ids)
    )
    parsed: dict[str, frozenset[str]] = {}
    for qid in required:
        if qid not in inner:
            raise AnswerParseError(OUTCOME_MALFORMED, f"missing question key {qid!r}")
        value = inner[qid]
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise AnswerParseError(OUTCOME_MALFORMED, f"{qid} is not a list of strings")
        if not value:
            raise AnswerParseError(OUTCOME_MALFORMED, f"empty label list for {qid}")
        try:
            label_set = validate_labels(schema.question(qid), value)
        except LabelValidationError as exc:
            raise AnswerParseError(
                OUTCOME_UNKNOWN_OPTION, f"{qid}: {exc}"
            ) from exc
        parsed[qid] = label_set.labels
    return parsed


def format_answer(
    entity_surface: str, answers: Mapping[str, Iterable[str]], markers: bool = True
) -> str:
    """Serialize an answer map in the wire format ``parse_answer`` accepts."""
    payload = {entity_surface: {qid: sorted(labels) for qid, labels in answers.items()}}
    text = json.dumps(payload, ensure_ascii=False, indent=2)
    if markers:
        return f"{ANSWER_BEGIN}\n{text}\n{ANSWER_END}"
    return text


# ---------------------------------------------------------------------------
# run records and cache


@dataclass
class Attempt:
    raw_text: str
    outcome: str
    detail: str = ""
    prompt_tokens: int | None = None
    completion_tokens: int | None = None

    def to_dict(self) -> dict:
        return {
            "raw_text": self.raw_text,
            "outcome": self.outcome,
            "detail": self.detail,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Attempt":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class RunRecord:
    entity_id: str
    template_id: str
    run_index: int
    attempts: list[Attempt] = field(default_factory=list)
    parsed: dict[str, frozenset[str]] | None = None
    params_fp: str = ""

    @property
    def attempt_count(self) -> int:
        return len(self.attempts)

    @property
    def failed(self) -> bool:
        return self.parsed is None

    @property
    def final_outcome(self) -> str:
        return self.attempts[-1].outcome if self.attempts else OUTCOME_EMPTY

    def to_dict(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "template_id": self.template_id,
            "run_index": self.run_index,
            "attempts": [a.to_dict() for a in self.attempts],
            "parsed": None
            if self.parsed is None
            else {qid: sorted(labels) for qid, labels in self.parsed.items()},
            "params_fp": self.params_fp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(
            entity_id=d["entity_id"],
            template_id=d["template_id"],
            run_index=int(d["run_index"]),
            attempts=[Attempt.from_dict(a) for a in d.get("attempts", [])],
            parsed=None
            if d.get("parsed") is None
            else {qid: frozenset(labels) for qid, labels in d["parsed"].items()},
            params_fp=d.get("params_fp", ""),
        )


CacheKey = tuple[str, str, str, int]  # template_id, entity_id, params_fp, run_index


class RunCache:
    """Concurrent-read cache of completed RunRecords; writes are serialized."""

    def __init__(self) -> None:
        self._records: dict[CacheKey, RunRecord] = {}
        self._lock = threading.Lock()

    def get(self, key: CacheKey) -> RunRecord | None:
        with self._lock:
            return self._records.get(key)

    def put(self, key: CacheKey, record: RunRecord) -> None:
        with self._lock:
            self._records[key] = record

    def records(self) -> list[RunRecord]:
        with self._lock:
            return list(self._records.values())

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "RunCache":
        cache = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = RunRecord.from_dict(json.loads(line))
                cache.put(
                    (record.template_id, record.entity_id, record.params_fp, record.run_index),
                    record,
                )
        return cache


def write_runs_jsonl(records: Iterable[RunRecord], path: str | Path) -> None:
    ordered = sorted(records, key=lambda r: (r.entity_id, r.template_id, r.run_index))
    with open(path, "w", encoding="utf-8") as fh:
        for record in ordered:
            fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")


def read_runs_jsonl(path: str | Path) -> list[RunRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(RunRecord.from_dict(json.loads(line)))
    return records


# ---------------------------------------------------------------------------
# annotation loop


class RateLimiter:
    """Minimum-interval limiter shared across worker threads."""

    def __init__(self, requests_per_second: float):
        self._interval = 1.0 / requests_per_second
        self._lock = threading.Lock()
        self._next_at = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_at - now
            self._next_at = max(now, self._next_at) + self._interval
        if wait > 0:
            time.sleep(wait)


def annotate_entity(
    params: GenerationParams,
    template: PromptTemplate,
    entity: EntityRecord,
    schema: ClassificationSchema,
    max_attempts: int = 5,
    run_index: int = 0,
    cache: RunCache | None = None,
    transport: Transport | None = None,
    past_mistakes_text: str = "",
    strict_markers: bool = False,
    rate_limiter: RateLimiter | None = None,
) -> RunRecord:
    """Annotate one entity with one template, retrying classified failures.

    Loops complete -> parse until an attempt parses cleanly or the budget is
    exhausted; every attempt is recorded. The cache is consulted first and a
    hit short-circuits the network entirely.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    fingerprint = params.fingerprint()
    key: CacheKey = (template.template_id, entity.entity_id, fingerprint, run_index)
    if cache is not None:
        cached = cache.get(key)
        if cached is not None:
            return cached
    send = transport or complete
    prompt = render(template, entity.surface, entity.hierarchy, past_mistakes_text)
    record = RunRecord(
        entity_id=entity.entity_id,
        template_id=template.template_id,
        run_index=run_index,
        params_fp=fingerprint,
    )
    for attempt_index in range(max_attempts):
        user_tag = f"{template.template_id}|{run_index}|{attempt_index}"
        if rate_limiter is not None:
            rate_limiter.acquire()
        try:
            completion = send(params, prompt, user_tag)
        except TransportError as exc:
            record.attempts.append(
                Attempt(raw_text="", outcome=exc.outcome, detail=exc.detail)
            )
            continue
        try:
            parsed = parse_answer(
                completion.text,
                entity.surface,
                schema,
                template.mode,
                template.question_id,
                strict_markers,
            )
        except AnswerParseError as exc:
            record.attempts.append(
                Attempt(
                    raw_text=completion.text,
                    outcome=exc.outcome,
                    detail=exc.detail,
                    prompt_tokens=completion.prompt_tokens,
                    completion_tokens=completion.completion_tokens,
                )
            )
            continue
        record.attempts.append(
            Attempt(
                raw_text=completion.text,
                outcome=OUTCOME_OK,
                prompt_tokens=completion.prompt_tokens,
                completion_tokens=completion.completion_tokens,
            )
        )
        record.parsed = parsed
        break
    if cache is not None:
        cache.put(key, record)
    return record


def annotate_many(
    params: GenerationParams,
    members: Sequence[tuple[PromptTemplate, int]],
    entities: Sequence[EntityRecord],
    schema: ClassificationSchema,
    max_attempts: int = 5,
    cache: RunCache | None = None,
    transport: Transport | None = None,
    workers: int = 8,
    requests_per_second: float | None = None,
    strict_markers: bool = False,
) -> list[RunRecord]:
    """Annotate a batch through a bounded worker pool.

    Entities fan out across workers; one entity's ensemble members run
    sequentially inside a single task, which keeps per-entity request order
    (and therefore any scripted test endpoint) deterministic.
    """
    limiter = RateLimiter(requests_per_second) if requests_per_second else None

    def one_entity(entity: EntityRecord) -> list[RunRecord]:
        return [
            annotate_entity(
                params,
                template,
                entity,
                schema,
                max_attempts=max_attempts,
                run_index=run_index,
                cache=cache,
                transport=transport,
                strict_markers=strict_markers,
                rate_limiter=limiter,
            )
            for template, run_index in members
        ]

    records: list[RunRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for batch in pool.map(one_entity, entities):
            records.extend(batch)
    records.sort(key=lambda r: (r.entity_id, r.template_id, r.run_index))
    return records


# ---------------------------------------------------------------------------
# hierarchy extraction


@dataclass
class HierarchyResult:
    record: RunRecord
    split: HierarchySplit | None = None

    @property
    def failed(self) -> bool:
        return self.split is None


def parse_hierarchy_answer(raw: str, entity_surface: str) -> HierarchySplit:
    """Parse ``{"role": ..., "hierarchy": ..., "base": ...}``; empty strings
    mean the part is absent, an empty base means nothing was split off."""
    if raw is None or not raw.strip():
        raise AnswerParseError(OUTCOME_EMPTY, "blank response")
    obj = _extract_answer_object(raw, strict_markers=False)
    if "base" not in obj:
        raise AnswerParseError(OUTCOME_MALFORMED, "missing 'base' key")
    parts: dict[str, str | None] = {}
    for name in ("role", "hierarchy", "base"):
        value = obj.get(name, "")
        if value is None:
            value = ""
        if not isinstance(value, str):
            raise AnswerParseError(OUTCOME_MALFORMED, f"{name!r} is not a string")
        parts[name] = value.strip() or None
    base = parts["base"] or entity_surface
    if normalize_surface(base) != normalize_surface(entity_surface) and not (
        parts["role"] or parts["hierarchy"]
    ):
        raise AnswerParseError(
            OUTCOME_MALFORMED, "base differs from source but no role/hierarchy extracted"
        )
    return HierarchySplit(
        source_surface=entity_surface,
        base_surface=base,
        role=parts["role"],
        hierarchy=parts["hierarchy"],
    )


def extract_hierarchy(
    params: GenerationParams,
    entity: EntityRecord,
    template: PromptTemplate | None = None,
    max_attempts: int = 5,
    cache: RunCache | None = None,
    transport: Transport | None = None,
    rate_limiter: RateLimiter | None = None,
) -> HierarchyResult:
    """Ask the model to split an organization into role/hierarchy/base.

    A budget-exhausting failure leaves the entity unsplit (``split`` None).
    """
    if entity.kind != "organization":
        raise ValueError("hierarchy extraction applies to organizations only")
    template = template or build_hierarchy_template()
    fingerprint = params.fingerprint()
    key: CacheKey = (template.template_id, entity.entity_id, fingerprint, 0)
    record: RunRecord | None = cache.get(key) if cache is not None else None
    if record is None:
        send = transport or complete
        prompt = render(template, entity.surface)
        record = RunRecord(
            entity_id=entity.entity_id,
            template_id=template.template_id,
            run_index=0,
            params_fp=fingerprint,
        )
        for attempt_index in range(max_attempts):
            user_tag = f"{template.template_id}|0|{attempt_index}"
            if rate_limiter is not None:
                rate_limiter.acquire()
            try:
                completion = send(params, prompt, user_tag)
            except TransportError as exc:
                record.attempts.append(
                    Attempt(raw_text="", outcome=exc.outcome, detail=exc.detail)
                )
                continue
            try:
                parse_hierarchy_answer(completion.text, entity.surface)
            except AnswerParseError as exc:
                record.attempts.append(
                    Attempt(
                        raw_text=completion.text,
                        outcome=exc.outcome,
                        detail=exc.detail,
                        prompt_tokens=completion.prompt_tokens,
                        completion_tokens=completion.completion_tokens,
                    )
                )
                continue
            record.attempts.append(
                Attempt(
                    raw_text=completion.text,
                    outcome=OUTCOME_OK,
                    prompt_tokens=completion.prompt_tokens,
                    completion_tokens=completion.completion_tokens,
                )
            )
            break
        if cache is not None:
            cache.put(key, record)
    if record.attempts and record.attempts[-1].outcome == OUTCOME_OK:
        split = parse_hierarchy_answer(record.attempts[-1].raw_text, entity.surface)
        return HierarchyResult(record=record, split=split)
    return HierarchyResult(record=record, split=None)
