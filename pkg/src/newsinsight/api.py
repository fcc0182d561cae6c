"""HTTP read API over an :class:`InsightStore`.

``GET /v1/news`` accepts ``ticker``, ``published.gte``, ``published.lte``,
``limit`` (1-1000, default 100), ``cursor`` and ``order`` (``asc``/``desc``).
``GET /healthz`` answers 200 while the service is up.
"""

from __future__ import annotations

import json
import logging
import threading
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlencode, urlsplit

from .ingest import parse_utc
from .store import DEFAULT_LIMIT, BadQuery, InsightStore, Query

logger = logging.getLogger(__name__)

_PARAMS = {"ticker", "published.gte", "published.lte", "limit", "cursor", "order"}


def query_from_params(params: dict[str, list[str]]) -> Query:
    unknown = sorted(set(params) - _PARAMS)
    if unknown:
        raise BadQuery(unknown[0], "unknown parameter")
    for name, values in params.items():
        if len(values) != 1:
            raise BadQuery(name, "given more than once")
    one = {k: v[0] for k, v in params.items()}

    def stamp(name: str):
        if name not in one:
            return None
        try:
            return parse_utc(one[name])
        except ValueError:
            raise BadQuery(name, "not an ISO-8601 date or timestamp") from None

    limit = DEFAULT_LIMIT
    if "limit" in one:
        try:
            limit = int(one["limit"])
        except ValueError:
            raise BadQuery("limit", "not an integer") from None
    ticker = one.get("ticker")
    if ticker is not None and not ticker.strip():
        raise BadQuery("ticker", "empty")
    return Query(
        ticker=ticker,
        published_gte=stamp("published.gte"),
        published_lte=stamp("published.lte"),
        limit=limit,
        cursor=one.get("cursor") or None,
        order=one.get("order", "desc"),
    )


class NewsHandler(BaseHTTPRequestHandler):
    server_version = "newsinsight/0.1"
    protocol_version = "HTTP/1.1"
    store: InsightStore

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str, field: str | None = None) -> None:
        payload = {"status": "ERROR", "error": message}
        if field:
            payload["field"] = field
        self._send(status, json.dumps(payload).encode())

    def do_GET(self):
        parts = urlsplit(self.path)
        if parts.path == "/healthz":
            self._send(HTTPStatus.OK, b'{"status":"OK"}')
            return
        if parts.path != "/v1/news":
            self._error(HTTPStatus.NOT_FOUND, "not found")
            return
        params = parse_qs(parts.query, keep_blank_values=True)
        try:
            q = query_from_params(params)
            page = self.store.query(q)
        except BadQuery as exc:
            self._error(HTTPStatus.BAD_REQUEST, str(exc), exc.field)
            return
        head = {"status": "OK", "count": len(page.raw)}
        if page.next_cursor:
            nxt = {k: v[0] for k, v in params.items() if k != "cursor"}
            nxt["cursor"] = page.next_cursor
            host = self.headers.get("Host") or "%s:%d" % self.server.server_address[:2]
            head["next_url"] = f"http://{host}/v1/news?{urlencode(nxt)}"
        envelope = json.dumps(head, separators=(",", ":"))
        body = envelope[:-1].encode() + b',"results":[' + b",".join(page.raw) + b"]}"
        self._send(HTTPStatus.OK, body)


def make_server(store: InsightStore, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("BoundNewsHandler", (NewsHandler,), {"store": store})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve_in_thread(store: InsightStore, host: str = "127.0.0.1", port: int = 0) -> tuple[ThreadingHTTPServer, threading.Thread]:
    server = make_server(store, host, port)
    thread = threading.Thread(target=server.serve_forever, name="newsinsight-api", daemon=True)
    thread.start()
    return server, thread


def serve(store: InsightStore, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(store, host, port)
    logger.info("serving %d records on http://%s:%d/v1/news", len(store), host, server.server_address[1])
    try:
        server.serve_forever()
    finally:
        server.server_close()
