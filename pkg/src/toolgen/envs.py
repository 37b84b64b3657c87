"""Tool execution environments: fixture lookup and real HTTP calls."""
from __future__ import annotations

import json
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Mapping, Protocol


class Status(str, Enum):
    OK = "ok"
    TOOL_ERROR = "tool_error"
    NETWORK_ERROR = "network_error"


@dataclass(frozen=True)
class ExecutionResult:
    status: Status
    body: str
    latency: float = 0.0

    def to_json(self) -> dict:
        return {"status": self.status.value, "body": self.body, "latency": round(self.latency, 6)}


class Environment(Protocol):
    def execute(self, tool: int, parameters: Mapping[str, Any]) -> ExecutionResult: ...


def canonical_params(parameters: Mapping[str, Any]) -> str:
    return json.dumps(parameters, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def missing_required(api, parameters: Mapping[str, Any]) -> list[str]:
    return [p.name for p in api.required_parameters if p.name not in parameters]


class FixtureEnv:
    """Exact-match lookup of (tool, canonical parameters) -> stored body."""

    def __init__(self, fixtures: Mapping[tuple[int, str], str]):
        self.fixtures = dict(fixtures)

    @classmethod
    def from_records(cls, records, resolve) -> "FixtureEnv":
        """Records are {tool, params, body}; `resolve` maps the tool field to an ordinal."""
        table = {}
        for rec in records:
            table[(resolve(rec["tool"]), canonical_params(rec.get("params") or {}))] = str(rec["body"])
        return cls(table)

    @classmethod
    def from_jsonl(cls, path: str | Path, resolve) -> "FixtureEnv":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_records((json.loads(ln) for ln in lines if ln.strip()), resolve)

    def execute(self, tool: int, parameters: Mapping[str, Any]) -> ExecutionResult:
        key = (int(tool), canonical_params(parameters))
        body = self.fixtures.get(key)
        if body is None:
            return ExecutionResult(Status.TOOL_ERROR, f"no fixture for tool {key[0]} with parameters {key[1]}")
        return ExecutionResult(Status.OK, body)


def fixture_env(fixtures) -> FixtureEnv:
    """From a {(tool, canonical params): body} map or (tool, params, body) triples."""
    items = ((t, p, b) for (t, p), b in fixtures.items()) if isinstance(fixtures, Mapping) else fixtures
    table = {}
    for tool, params, body in items:
        table[(int(tool), params if isinstance(params, str) else canonical_params(params))] = body
    return FixtureEnv(table)


@dataclass(frozen=True)
class Endpoint:
    url_template: str
    method: str = "GET"
    timeout_ms: int = 5000


class HttpEnv:
    """Issues the documented HTTP verb for each tool.

    Template placeholders ({name}) are filled from the parameters; the rest go
    in the query string (GET/DELETE) or a JSON body (POST/PUT).
    """

    def __init__(self, registry, endpoints: Mapping[int, Endpoint], max_concurrency: int = 4):
        self.registry = registry
        self.endpoints = dict(endpoints)
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def execute(self, tool: int, parameters: Mapping[str, Any]) -> ExecutionResult:
        api = self.registry.apis[int(tool)]
        missing = missing_required(api, parameters)
        if missing:
            return ExecutionResult(Status.TOOL_ERROR, f"missing required parameters: {', '.join(missing)}")
        ep = self.endpoints.get(int(tool))
        if ep is None:
            return ExecutionResult(Status.TOOL_ERROR, f"no endpoint configured for tool {tool}")
        method = (api.method or ep.method or "GET").upper()
        params = dict(parameters)
        try:
            url = ep.url_template.format_map({k: urllib.parse.quote(str(v), safe="") for k, v in params.items()})
        except KeyError as e:
            return ExecutionResult(Status.TOOL_ERROR, f"url template needs parameter {e.args[0]}")
        rest = {k: v for k, v in params.items() if "{" + k + "}" not in ep.url_template}
        data = None
        headers = {"Accept": "application/json"}
        if method in ("POST", "PUT"):
            data = json.dumps(rest, sort_keys=True).encode()
            headers["Content-Type"] = "application/json"
        elif rest:
            url += ("&" if "?" in url else "?") + urllib.parse.urlencode(sorted((k, str(v)) for k, v in rest.items()))
        req = urllib.request.Request(url, data=data, method=method, headers=headers)
        start = time.monotonic()
        with self._slots:
            try:
                with urllib.request.urlopen(req, timeout=ep.timeout_ms / 1000.0) as resp:
                    body = resp.read().decode("utf-8", errors="replace")
                return ExecutionResult(Status.OK, body, time.monotonic() - start)
            except urllib.error.HTTPError as e:
                body = e.read().decode("utf-8", errors="replace")
                return ExecutionResult(Status.TOOL_ERROR, f"HTTP {e.code}: {body}", time.monotonic() - start)
            except (urllib.error.URLError, TimeoutError, OSError) as e:
                elapsed = time.monotonic() - start
                reason = getattr(e, "reason", e)
                return ExecutionResult(Status.NETWORK_ERROR, f"{reason} after {elapsed:.3f}s", elapsed)


def http_env(registry, endpoints: Mapping[int, Endpoint | Mapping[str, Any]], max_concurrency: int = 4) -> HttpEnv:
    eps = {int(t): e if isinstance(e, Endpoint) else Endpoint(**e) for t, e in endpoints.items()}
    return HttpEnv(registry, eps, max_concurrency)


class _EchoHandler(BaseHTTPRequestHandler):
    def _reply(self):
        n = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(n).decode() if n else ""
        parsed = urllib.parse.urlsplit(self.path)
        body = json.dumps(
            {
                "method": self.command,
                "path": parsed.path,
                "query": dict(urllib.parse.parse_qsl(parsed.query)),
                "body": json.loads(raw) if raw else None,
            },
            sort_keys=True,
        ).encode()
        status = 404 if parsed.path.startswith("/missing") else 200
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    do_GET = do_POST = do_PUT = do_DELETE = _reply

    def log_message(self, *args):
        pass


class EchoServer:
    """Local stub that echoes method, path, query and JSON body. Use as a context manager."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.httpd = ThreadingHTTPServer((host, port), _EchoHandler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "EchoServer":
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
