"""HTTP front end: a small ThingSpeak-style wire surface over TelemetryService.

Routes:
  GET|POST /update                        -> decimal entry id, or "0" on failure
  GET /channels/<id>/feeds.json           -> channel metadata + feed entries
  GET /channels/<id>/fields/<k>.json      -> same, restricted to one field
  POST /login                             -> {"token": "..."}
"""

from __future__ import annotations

import json
import logging
import re
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .service import (
    AuthenticationError,
    FieldRangeError,
    InvalidKeyError,
    RateLimitedError,
    TelemetryService,
    UnknownChannelError,
)

log = logging.getLogger(__name__)

_FEEDS_RE = re.compile(r"^/channels/(\d+)/feeds\.json$")
_FIELD_RE = re.compile(r"^/channels/(\d+)/fields/(\d+)\.json$")
_FIELD_PARAM_RE = re.compile(r"^field([1-9]\d*)$")


def _format_ts(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def _parse_ts(text: str) -> datetime:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def _value_str(value: float | None) -> str | None:
    return None if value is None else str(value)


class TelemetryHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], service: TelemetryService):
        super().__init__(address, _Handler)
        self.service = service


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    timeout = 30
    server: TelemetryHTTPServer

    def log_message(self, fmt, *args):  # keep request noise off stderr
        log.debug("%s %s", self.address_string(), fmt % args)

    # -- plumbing -----------------------------------------------------------

    def _send(self, status: int, body: str, content_type: str = "application/json") -> None:
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", f"{content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _params(self) -> dict[str, str]:
        """Query-string params, overlaid with form-encoded body params on POST."""
        parsed = urlsplit(self.path)
        params = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        if self.command == "POST":
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                body = self.rfile.read(length).decode("utf-8")
                params.update({k: v[0] for k, v in parse_qs(body).items()})
        return params

    def _bearer_token(self) -> str | None:
        auth = self.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            return auth[len("Bearer ") :]
        return None

    # -- routing ------------------------------------------------------------

    def do_GET(self):
        path = urlsplit(self.path).path
        if path == "/update":
            self._handle_update()
        elif _FEEDS_RE.match(path) or _FIELD_RE.match(path):
            self._handle_read(path)
        else:
            self._send(404, '{"error":"not found"}')

    def do_POST(self):
        path = urlsplit(self.path).path
        if path == "/update":
            self._handle_update()
        elif path == "/login":
            self._handle_login()
        else:
            self._send(404, '{"error":"not found"}')

    # -- endpoints ----------------------------------------------------------

    def _handle_update(self):
        params = self._params()
        api_key = params.get("api_key", "")
        fields: dict[int, float] = {}
        created_at = None
        try:
            for name, value in params.items():
                m = _FIELD_PARAM_RE.match(name)
                if m:
                    fields[int(m.group(1))] = float(value)
            if "created_at" in params:
                created_at = _parse_ts(params["created_at"])
        except ValueError:
            self._send(400, "0", content_type="text/plain")
            return
        try:
            entry_id = self.server.service.handle_update(api_key, fields, created_at)
        except InvalidKeyError:
            self._send(401, "0", content_type="text/plain")
        except RateLimitedError:
            self._send(429, "0", content_type="text/plain")
        except FieldRangeError:
            self._send(400, "0", content_type="text/plain")
        else:
            self._send(200, str(entry_id), content_type="text/plain")

    def _handle_read(self, path: str):
        params = self._params()
        feeds_match = _FEEDS_RE.match(path)
        field_match = _FIELD_RE.match(path)
        channel_id = int((feeds_match or field_match).group(1))
        try:
            results = int(params.get("results", "100"))
            if results < 1:
                raise ValueError
        except ValueError:
            self._send(400, '{"error":"results must be a positive integer"}')
            return
        try:
            channel, entries = self.server.service.get_feeds(
                channel_id,
                results=results,
                read_key=params.get("api_key"),
                token=self._bearer_token(),
            )
        except UnknownChannelError:
            self._send(404, '{"error":"channel not found"}')
            return
        except AuthenticationError:
            self._send(401, '{"error":"unauthorized"}')
            return

        if field_match:
            k = int(field_match.group(2))
            if not (1 <= k <= len(channel.field_names)):
                self._send(400, '{"error":"no such field"}')
                return
            wanted = [k]
        else:
            wanted = list(range(1, len(channel.field_names) + 1))

        channel_block: dict = {"id": channel.id, "name": channel.name}
        for i in wanted:
            channel_block[f"field{i}"] = channel.field_names[i - 1]
        feeds = []
        for entry in entries:
            row: dict = {"created_at": _format_ts(entry.created_at), "entry_id": entry.entry_id}
            for i in wanted:
                row[f"field{i}"] = _value_str(entry.field_values[i - 1])
            feeds.append(row)
        body = json.dumps({"channel": channel_block, "feeds": feeds}, separators=(",", ":"))
        self._send(200, body)

    def _handle_login(self):
        params = self._params()
        try:
            token = self.server.service.authenticate(
                params.get("username", ""), params.get("password", "")
            )
        except AuthenticationError:
            self._send(401, '{"error":"invalid credentials"}')
        else:
            self._send(200, json.dumps({"token": token}, separators=(",", ":")))


def start_server(
    service: TelemetryService, host: str = "127.0.0.1", port: int = 0
) -> tuple[TelemetryHTTPServer, threading.Thread]:
    """Serve on a background thread; returns the server (already bound) and thread."""
    server = TelemetryHTTPServer((host, port), service)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
