"""Batch linkage HTTP service: POST /link, GET /health, GET /info.

One dataset per instance; all shared state is immutable after load, so
request handling is embarrassingly parallel up to the admission limit.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .entity_store import Address, QueryRecord
from .pipeline import Linker, LinkerConfig
from .scoring import Strategy

log = logging.getLogger(__name__)

MAX_CONCURRENT_REQUESTS = 8


class _Admission:
    """Counting gate with a concurrency high-water mark.

    Blocking semaphore acquisition keeps excess requests queued in
    arrival order instead of rejecting them.
    """

    def __init__(self, limit: int):
        self.limit = limit
        self._sem = threading.Semaphore(limit)
        self._lock = threading.Lock()
        self._active = 0
        self.high_water = 0

    def __enter__(self):
        self._sem.acquire()
        with self._lock:
            self._active += 1
            self.high_water = max(self.high_water, self._active)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self._active -= 1
        self._sem.release()
        return False


class BadRequest(ValueError):
    pass


def parse_query(obj: dict, index: int) -> QueryRecord:
    """One wire query -> QueryRecord; raises BadRequest on shape errors
    and ValueError on an empty name (surfaced as a per-query 422 error)."""
    if not isinstance(obj, dict):
        raise BadRequest(f"query {index} is not an object")
    name = obj.get("name")
    if name is not None and not isinstance(name, str):
        raise BadRequest(f"query {index}: name must be a string")
    alts = obj.get("namesAlt", [])
    sics = obj.get("sics", [])
    addrs = obj.get("addresses", [])
    if not isinstance(alts, list) or not all(isinstance(a, str) for a in alts):
        raise BadRequest(f"query {index}: namesAlt must be a list of strings")
    if not isinstance(sics, list) or not all(isinstance(s, str) for s in sics):
        raise BadRequest(f"query {index}: sics must be a list of strings")
    if not isinstance(addrs, list):
        raise BadRequest(f"query {index}: addresses must be a list")
    addresses = []
    for a in addrs:
        if not isinstance(a, dict):
            raise BadRequest(f"query {index}: address entries must be objects")
        addresses.append(Address(
            street=a.get("street"), city=a.get("city"),
            postal=a.get("postal"), country=a.get("country")))
    # empty / missing name raises ValueError from QueryRecord
    return QueryRecord(name=name or "", names_alt=tuple(alts),
                       addresses=tuple(addresses), sics=tuple(sics))


def parse_options(obj: dict) -> dict:
    opts: dict = {}
    if not isinstance(obj, dict):
        raise BadRequest("options must be an object")
    if "topN" in obj:
        if not isinstance(obj["topN"], int) or obj["topN"] < 1:
            raise BadRequest("options.topN must be a positive integer")
        opts["top_n"] = obj["topN"]
    if "threshold" in obj:
        t = obj["threshold"]
        if not isinstance(t, (int, float)) or not 0.0 <= t <= 1.0:
            raise BadRequest("options.threshold must be in [0, 1]")
        opts["threshold"] = float(t)
    if "strategy" in obj:
        try:
            opts["strategy"] = Strategy(obj["strategy"])
        except ValueError:
            raise BadRequest(f"unknown strategy {obj['strategy']!r}")
    return opts


class LinkServer:
    """HTTP server around a Linker; binds immediately, answers 503 until
    load() completes."""

    def __init__(
        self,
        config: LinkerConfig,
        base_dir: str | Path = ".",
        host: str = "127.0.0.1",
        port: int = 0,
        max_concurrent: int = MAX_CONCURRENT_REQUESTS,
    ):
        self.config = config
        self.base_dir = base_dir
        self.linker: Optional[Linker] = None
        self.admission = _Admission(max_concurrent)
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.daemon_threads = True
        self.httpd.service = self  # type: ignore[attr-defined]
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def load(self) -> None:
        self.linker = Linker(self.config, self.base_dir)

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join()

    def run(self) -> None:
        """Load then serve until interrupted (CLI entry point)."""
        self.start()
        log.info("listening on %s (loading dataset...)", self.address)
        self.load()
        log.info("dataset loaded: %d records", len(self.linker.store))
        try:
            self._thread.join()
        except KeyboardInterrupt:
            self.stop()

    # -- request handling -------------------------------------------------

    def info(self) -> dict:
        out = {
            "datasetId": str(self.config.entity_db),
            "bandConfig": str(self.config.band_config),
            "configDigest": self.config.digest(),
            "strategy": self.config.strategy,
            "concurrencyLimit": self.admission.limit,
            "concurrencyHighWater": self.admission.high_water,
        }
        if self.linker is not None:
            out["recordCount"] = len(self.linker.store)
        return out

    def handle_link(self, body: bytes) -> tuple[int, dict]:
        try:
            payload = json.loads(body)
        except json.JSONDecodeError as exc:
            return 400, {"error": f"malformed JSON: {exc}"}
        if not isinstance(payload, dict) or not isinstance(
                payload.get("queries"), list) or not payload["queries"]:
            return 400, {"error": "body must contain a non-empty 'queries' list"}
        try:
            opts = parse_options(payload.get("options", {}))
        except BadRequest as exc:
            return 400, {"error": str(exc)}

        queries: list[Optional[QueryRecord]] = []
        errors: list[dict] = []
        for i, obj in enumerate(payload["queries"]):
            try:
                queries.append(parse_query(obj, i))
            except BadRequest as exc:
                return 400, {"error": str(exc)}
            except ValueError as exc:
                queries.append(None)
                errors.append({"index": i, "error": str(exc)})
        if errors:
            return 422, {"error": "invalid queries", "queries": errors}

        with self.admission:
            t0 = time.perf_counter()
            outcomes = self.linker.link_batch(queries, **opts)
            elapsed_ms = (time.perf_counter() - t0) * 1000.0
        results = []
        comparisons = []
        for out in outcomes:
            if isinstance(out, Exception):
                results.append({"error": str(out)})
                comparisons.append(None)
            else:
                matches, n = out
                results.append([m.to_dict() for m in matches])
                comparisons.append(n)
        return 200, {
            "results": results,
            "comparisons": comparisons,
            "elapsedMs": round(elapsed_ms, 3),
            "meta": {
                "datasetId": str(self.config.entity_db),
                "configDigest": self.config.digest(),
            },
        }


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def service(self) -> LinkServer:
        return self.server.service  # type: ignore[attr-defined]

    def log_message(self, fmt, *args):  # route through logging, not stderr
        log.debug("%s - %s", self.address_string(), fmt % args)

    def _send_json(self, status: int, payload: dict) -> None:
        data = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/health":
            if self.service.linker is None:
                self._send_json(503, {"status": "loading"})
            else:
                self._send_json(200, {"status": "ok"})
        elif self.path == "/info":
            self._send_json(200, self.service.info())
        else:
            self._send_json(404, {"error": f"no such path {self.path}"})

    def do_POST(self):
        if self.path != "/link":
            self._send_json(404, {"error": f"no such path {self.path}"})
            return
        if self.service.linker is None:
            self._send_json(503, {"status": "loading"})
            return
        try:
            length = int(self.headers.get("Content-Length", 0))
        except ValueError:
            self._send_json(400, {"error": "bad Content-Length"})
            return
        body = self.rfile.read(length)
        try:
            status, payload = self.service.handle_link(body)
        except Exception:  # noqa: BLE001 - never leak a traceback to the wire
            log.exception("request failed")
            status, payload = 500, {"error": "internal error"}
        self._send_json(status, payload)
