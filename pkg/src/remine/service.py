"""Stateless key-value rewrite lookup with atomic hot reload.

Lookups read one immutable snapshot (entries plus version) published by a
single reference assignment, so a response can never mix entries of two
table versions and readers never block on reload.  Lookups are fail-open:
the worst case is a pass-through, never an error to the caller.

Wire protocol: ``GET /rewrite?u=<utterance>`` and ``POST /admin/reload``
(optional JSON body ``{"path": ...}``), plus ``POST /admin/disable``
(``{"disabled": true|false}``) for the runtime feature toggle.  Responses
are JSON.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlsplit

from .normalize import normalize_utterance
from .rewrite_miner import RewriteTable, TableFormatError, load_table

log = logging.getLogger(__name__)

NO_TABLE_VERSION = "none"


@dataclass(frozen=True)
class LookupRequest:
    utterance: str


@dataclass(frozen=True)
class LookupResponse:
    decision: str  # "rewrite" or "pass_through"
    target: str | None
    score: float | None
    table_version: str
    latency_us: int
    warning: str | None = None

    def as_dict(self) -> dict:
        payload = {
            "decision": self.decision,
            "target": self.target,
            "score": self.score,
            "table_version": self.table_version,
            "latency_us": self.latency_us,
        }
        if self.warning:
            payload["warning"] = self.warning
        return payload


@dataclass(frozen=True)
class _Snapshot:
    entries: dict[str, tuple[str, float]]
    version: str


def _snapshot_from_table(table: RewriteTable) -> _Snapshot:
    return _Snapshot(
        entries={
            source: (candidate.target, candidate.score)
            for source, candidate in table.entries.items()
        },
        version=table.provenance.version,
    )


class RewriteService:
    """Many concurrent readers, one admin writer; reload swaps a snapshot."""

    def __init__(
        self,
        table: RewriteTable | None = None,
        *,
        disabled: bool = False,
        table_path: str | Path | None = None,
    ) -> None:
        self._snapshot: _Snapshot | None = (
            _snapshot_from_table(table) if table is not None else None
        )
        self._disabled = bool(disabled)
        self._table_path = str(table_path) if table_path is not None else None
        self._admin_lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, *, disabled: bool = False) -> "RewriteService":
        return cls(load_table(path), disabled=disabled, table_path=path)

    @property
    def table_version(self) -> str:
        snapshot = self._snapshot
        return snapshot.version if snapshot else NO_TABLE_VERSION

    @property
    def disabled(self) -> bool:
        return self._disabled

    def lookup(self, request: str | LookupRequest) -> LookupResponse:
        """Exact-match lookup on the normalized utterance; read-only."""
        started = time.perf_counter_ns()
        snapshot = self._snapshot  # one atomic read; all fields travel together
        disabled = self._disabled
        utterance = request.utterance if isinstance(request, LookupRequest) else request
        text = normalize_utterance(utterance)

        warning = None
        if snapshot is None:
            warning = "no-table-loaded"
        elif not text:
            warning = "empty-utterance"

        entry = None
        if snapshot is not None and not disabled and text:
            entry = snapshot.entries.get(text)
            if entry is not None and entry[0] == text:
                entry = None  # never rewrite to the identical utterance

        latency_us = (time.perf_counter_ns() - started) // 1000
        version = snapshot.version if snapshot else NO_TABLE_VERSION
        if entry is None:
            return LookupResponse("pass_through", None, None, version, latency_us, warning)
        return LookupResponse("rewrite", entry[0], entry[1], version, latency_us, warning)

    def reload(self, path: str | Path | None = None) -> str:
        """Atomically swap in a table file; a bad file leaves the old table.

        In-flight lookups keep the snapshot they already read; new lookups
        see the new snapshot.  Returns the new table version.
        """
        with self._admin_lock:
            target = str(path) if path is not None else self._table_path
            if target is None:
                raise TableFormatError("no table path configured for reload")
            table = load_table(target)  # raises before any state changes
            snapshot = _snapshot_from_table(table)
            self._snapshot = snapshot
            self._table_path = target
            log.info("reloaded rewrite table %s (version %s)", target, snapshot.version)
            return snapshot.version

    def set_disabled(self, flag: bool) -> bool:
        """Feature toggle: while disabled every lookup passes through."""
        self._disabled = bool(flag)
        return self._disabled


class RewriteServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: RewriteService) -> None:
        super().__init__(address, _Handler)
        self.service = service


class _Handler(BaseHTTPRequestHandler):
    server: RewriteServer

    def _send(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length <= 0:
            return {}
        raw = self.rfile.read(length)
        try:
            parsed = json.loads(raw)
        except json.JSONDecodeError:
            return {}
        return parsed if isinstance(parsed, dict) else {}

    def do_GET(self) -> None:  # noqa: N802 - http.server API
        parsed = urlsplit(self.path)
        if parsed.path != "/rewrite":
            self._send(404, {"error": "not found"})
            return
        utterance = parse_qs(parsed.query).get("u", [""])[0]
        self._send(200, self.server.service.lookup(utterance).as_dict())

    def do_POST(self) -> None:  # noqa: N802 - http.server API
        parsed = urlsplit(self.path)
        if parsed.path == "/admin/reload":
            body = self._body()
            try:
                version = self.server.service.reload(body.get("path"))
            except TableFormatError as exc:
                log.error("reload rejected: %s", exc)
                self._send(
                    400,
                    {"error": str(exc), "table_version": self.server.service.table_version},
                )
                return
            self._send(200, {"table_version": version})
        elif parsed.path == "/admin/disable":
            flag = bool(self._body().get("disabled", True))
            self._send(200, {"disabled": self.server.service.set_disabled(flag)})
        else:
            self._send(404, {"error": "not found"})

    def log_message(self, format: str, *args) -> None:  # noqa: A002
        log.debug("http: " + format, *args)


def build_server(service: RewriteService, host: str = "127.0.0.1", port: int = 0) -> RewriteServer:
    """Bind the HTTP server; ``port=0`` picks a free port (useful in tests)."""
    return RewriteServer((host, port), service)


def run_server(server: RewriteServer) -> None:
    host, port = server.server_address[:2]
    log.info("serving rewrites on %s:%d", host, port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:  # pragma: no cover - interactive shutdown
        pass
    finally:
        server.server_close()
