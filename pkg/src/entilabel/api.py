"""Local HTTP API serving the annotation UI and automation.

JSON endpoints under /api; anything else is served from the static UI
directory when one is configured. All writes go through the annotation
store's validation, so API-submitted and file-ingested records are
indistinguishable downstream. Agreement numbers come from the same metrics
functions as the CLI, never from a private re-implementation.
"""

from __future__ import annotations

import datetime as _dt
import json
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .metrics import compute_agreement_report
from .project import Project
from .schema import SchemaError
from .store import InsufficientAnnotatorsError, StoreError, make_record

_CONSENSUS_PATH = re.compile(r"^/api/consensus/([^/]+)$")


def _utc_now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class ApiHandler(BaseHTTPRequestHandler):
    server: "ApiServer"

    def log_message(self, format: str, *args) -> None:  # noqa: A002 - stdlib signature
        pass

    # -- helpers ---------------------------------------------------------

    def _send_json(self, status: int, body: dict | list) -> None:
        data = json.dumps(body, ensure_ascii=False, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def _query(self) -> dict[str, str]:
        raw = parse_qs(urlparse(self.path).query)
        return {k: v[0] for k, v in raw.items() if v}

    # -- routing ---------------------------------------------------------

    def do_GET(self) -> None:
        path = urlparse(self.path).path
        try:
            if path == "/api/schema":
                self._send_json(200, self.server.schema_document)
            elif path == "/api/tasks/next":
                self._tasks_next()
            elif path == "/api/agreement":
                self._agreement()
            elif path == "/api/progress":
                self._progress()
            else:
                match = _CONSENSUS_PATH.match(path)
                if match:
                    self._consensus(match.group(1))
                else:
                    self._static(path)
        except Exception as exc:  # noqa: BLE001 - must answer the socket
            self._error(500, f"{type(exc).__name__}: {exc}")

    def do_POST(self) -> None:
        path = urlparse(self.path).path
        try:
            if path == "/api/annotations":
                self._submit_annotation()
            else:
                self._error(404, f"unknown endpoint {path}")
        except Exception as exc:  # noqa: BLE001
            self._error(500, f"{type(exc).__name__}: {exc}")

    # -- endpoints ---------------------------------------------------------

    def _tasks_next(self) -> None:
        query = self._query()
        annotator = query.get("annotator")
        if not annotator:
            self._error(400, "annotator query parameter required")
            return
        round_number = int(query.get("round", "1"))
        project = self.server.project
        spec = project.round_spec(round_number)
        done = {
            record.entity_id
            for record in project.store.records()
            if record.annotator == annotator and record.round == round_number
        }
        total = len(spec.entity_ids)
        for position, entity_id in enumerate(spec.entity_ids, start=1):
            if entity_id in done:
                continue
            entity = project.entities.get(entity_id)
            if entity is None:
                continue
            self._send_json(
                200,
                {
                    "entity_id": entity.entity_id,
                    "surface": entity.surface,
                    "kind": entity.kind,
                    "hierarchy": entity.hierarchy,
                    "round": round_number,
                    "position": position,
                    "done": len(done),
                    "total": total,
                    "closed": spec.closed,
                },
            )
            return
        self._send_json(
            200,
            {"finished": True, "round": round_number, "done": len(done), "total": total},
        )

    def _submit_annotation(self) -> None:
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length))
        except (ValueError, TypeError):
            self._error(400, "body is not valid JSON")
            return
        project = self.server.project
        annotator = payload.get("annotator")
        entity_id = payload.get("entity_id")
        if not annotator or not entity_id:
            self._error(400, "annotator and entity_id are required")
            return
        if project.entities and entity_id not in project.entities:
            self._error(404, f"unknown entity {entity_id!r}")
            return
        round_number = int(payload.get("round", 1))
        spec = project.round_spec(round_number)
        if spec.closed:
            self._error(409, f"round {round_number} is closed")
            return
        raw_answers = payload.get("answers")
        if not isinstance(raw_answers, dict):
            raw_answers = {
                q.id: payload[q.id]
                for q in project.schema.questions
                if q.id in payload
            }
        timestamp = payload.get("timestamp") or _utc_now_iso()
        try:
            record = make_record(
                project.schema,
                annotator=str(annotator),
                entity_id=str(entity_id),
                raw_answers=raw_answers,
                round=round_number,
                timestamp=str(timestamp),
            )
            record_id = project.store.submit(record)
        except (SchemaError, StoreError) as exc:
            self._error(400, str(exc))
            return
        self._send_json(201, {"id": record_id})

    def _agreement(self) -> None:
        query = self._query()
        round_number = int(query["round"]) if "round" in query else None
        threshold = int(query.get("threshold", "2"))
        project = self.server.project
        store = project.store
        scoped = sorted(
            {
                record.entity_id
                for record in store.records()
                if round_number is None or record.round == round_number
            }
        )
        if not scoped:
            self._send_json(200, {"n_entities": 0, "pairwise_kappa": [],
                                  "annotator_loo_f1": [], "insufficient": True})
            return
        report = compute_agreement_report(
            store, entity_ids=scoped, threshold=threshold, round=round_number
        )
        self._send_json(200, report)

    def _consensus(self, entity_id: str) -> None:
        project = self.server.project
        if project.entities and entity_id not in project.entities:
            self._error(404, f"unknown entity {entity_id!r}")
            return
        query = self._query()
        threshold = int(query.get("threshold", "2"))
        round_number = int(query["round"]) if "round" in query else None
        try:
            result = project.store.consensus(
                entity_id, threshold=threshold, round=round_number
            )
        except InsufficientAnnotatorsError as exc:
            self._error(400, str(exc))
            return
        self._send_json(200, result.to_dict())

    def _progress(self) -> None:
        project = self.server.project
        rounds: dict[int, dict] = {}
        for record in project.store.records():
            agg = rounds.setdefault(
                record.round,
                {"round": record.round, "by_annotator": {}, "entities": set()},
            )
            agg["by_annotator"][record.annotator] = (
                agg["by_annotator"].get(record.annotator, 0) + 1
            )
            agg["entities"].add(record.entity_id)
        body = {
            "total_entities": len(project.entities),
            "rounds": [
                {
                    "round": number,
                    "total": len(project.round_spec(number).entity_ids),
                    "closed": project.round_spec(number).closed,
                    "annotated_entities": len(agg["entities"]),
                    "by_annotator": dict(sorted(agg["by_annotator"].items())),
                }
                for number, agg in sorted(rounds.items())
            ],
        }
        self._send_json(200, body)

    # -- static UI ---------------------------------------------------------

    def _static(self, path: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None:
            self._error(404, f"unknown endpoint {path} (no UI directory configured)")
            return
        relative = path.lstrip("/") or "index.html"
        target = (ui_dir / relative).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            self._error(404, f"no such file {relative}")
            return
        content_type = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class ApiServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(
        self,
        project: Project,
        host: str = "127.0.0.1",
        port: int = 0,
        ui_dir: str | Path | None = None,
    ):
        super().__init__((host, port), ApiHandler)
        self.project = project
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self.schema_document = load_schema_document(project)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"


def load_schema_document(project: Project) -> dict:
    """The schema config as a raw JSON document (what /api/schema serves)."""
    path = project.root / "schema.json"
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    from importlib import resources

    text = resources.files("entilabel.data").joinpath(
        "reference_schema.json"
    ).read_text(encoding="utf-8")
    return json.loads(text)


def start_api_server(
    project: Project,
    host: str = "127.0.0.1",
    port: int = 0,
    ui_dir: str | Path | None = None,
) -> tuple[ApiServer, threading.Thread]:
    server = ApiServer(project, host, port, ui_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
