"""Request/response plumbing: a tiny JSON router, an HTTP server, two clients.

Actors are served over real HTTP by ``serve`` or dispatched in-process by
``LocalTransport``; both go through the same JSON encoding so the wire format
is exercised either way.
"""

from __future__ import annotations

import json
import logging
import re
import socket
import sys
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Optional
from urllib.parse import unquote

import httpx

from .errors import ERRORS_BY_CODE, FareError

log = logging.getLogger(__name__)

Handler = Callable[..., Any]


class TransportFailure(Exception):
    """Base for failures that are not a protocol-level refusal."""


class RequestTimeout(TransportFailure):
    pass


class ConnectionFailure(TransportFailure):
    pass


class ServerError(TransportFailure):
    def __init__(self, status: int, detail: str = ""):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status


@dataclass
class Exchange:
    """One observed request/response pair."""

    name: str
    method: str
    path: str
    status: int
    request_bytes: int
    response_bytes: int
    request_body: bytes
    elapsed: float


class App:
    def __init__(self, name: str):
        self.name = name
        self._routes: list[tuple[str, re.Pattern, Handler, str]] = []

    def route(self, method: str, pattern: str, name: Optional[str] = None):
        regex = re.compile("^" + re.sub(r"{(\w+)}", r"(?P<\1>[^/]+)", pattern) + "$")

        def deco(fn: Handler) -> Handler:
            self._routes.append((method, regex, fn, name or fn.__name__))
            return fn

        return deco

    def dispatch(self, method: str, path: str, raw: bytes) -> tuple[int, bytes]:
        path = path.split("?", 1)[0]
        for m, regex, fn, _ in self._routes:
            match = regex.match(path)
            if match and m == method:
                break
        else:
            return 404, _dump({"error": "not-found", "detail": f"no route {method} {path}"})
        try:
            body = json.loads(raw) if raw else None
            kwargs = {k: unquote(v) for k, v in match.groupdict().items()}
            result = fn(body, **kwargs) if method == "POST" else fn(**kwargs)
            return 200, _dump(result)
        except FareError as exc:
            return exc.status, _dump({"error": exc.code, "detail": str(exc)})
        except json.JSONDecodeError as exc:
            return 400, _dump({"error": "parameter", "detail": f"bad JSON: {exc}"})
        except Exception as exc:  # noqa: BLE001 - surfaced as a 500 like any web stack
            log.exception("%s: unhandled error on %s %s", self.name, method, path)
            return 500, _dump({"error": "error", "detail": repr(exc)})


def _dump(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode()


def raise_for(status: int, payload: bytes) -> Any:
    try:
        body = json.loads(payload) if payload else None
    except json.JSONDecodeError:
        body = None
    if status == 200:
        return body
    if status == 504:
        raise RequestTimeout("gateway timeout")
    code = body.get("error") if isinstance(body, dict) else None
    detail = body.get("detail", "") if isinstance(body, dict) else ""
    if code in ERRORS_BY_CODE and code != "error":
        raise ERRORS_BY_CODE[code](detail)
    raise ServerError(status, detail)


# -- server -----------------------------------------------------------------


class Server:
    """An App behind a threaded HTTP/1.1 server on a background thread.

    ``workers`` caps concurrently executing handlers; a request that waits
    longer than ``gateway_timeout`` for a worker gets a 504 without running.
    ``service_time`` is a floor on how long a worker is held per request.
    """

    def __init__(self, app: App, host: str = "127.0.0.1", port: int = 0, workers: Optional[int] = None,
                 service_time: float = 0.0, gateway_timeout: float = 60.0):
        self.app = app
        self.service_time = service_time
        self.gateway_timeout = gateway_timeout
        self._slots = threading.BoundedSemaphore(workers) if workers else None
        server = self

        class RequestHandler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def setup(self):
                super().setup()
                self.request.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

            def log_message(self, fmt, *args):
                pass

            def _handle(self, method: str) -> None:
                arrived = time.monotonic()
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                status, payload = server._run(method, self.path, raw, arrived)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def do_GET(self):
                self._handle("GET")

            def do_POST(self):
                self._handle("POST")

        class _HTTPServer(ThreadingHTTPServer):
            daemon_threads = True
            request_queue_size = 1024

            def handle_error(self, request, client_address):
                # Clients that gave up before the answer are expected under load.
                if isinstance(sys.exc_info()[1], (BrokenPipeError, ConnectionResetError)):
                    return
                log.exception("%s: error serving %s", app.name, client_address)

        self._httpd = _HTTPServer((host, port), RequestHandler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, name=f"http-{app.name}", daemon=True)
        self._thread.start()

    def _run(self, method: str, path: str, raw: bytes, arrived: float) -> tuple[int, bytes]:
        if self._slots is None:
            return self._timed(method, path, raw)
        remaining = self.gateway_timeout - (time.monotonic() - arrived)
        if remaining <= 0 or not self._slots.acquire(timeout=remaining):
            return 504, _dump({"error": "timeout", "detail": "gateway timeout"})
        try:
            return self._timed(method, path, raw)
        finally:
            self._slots.release()

    def _timed(self, method: str, path: str, raw: bytes) -> tuple[int, bytes]:
        started = time.monotonic()
        out = self.app.dispatch(method, path, raw)
        left = self.service_time - (time.monotonic() - started)
        if left > 0:
            time.sleep(left)
        return out

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()


# -- clients ----------------------------------------------------------------


class Transport:
    """Client side of one actor. ``observer`` sees every exchange."""

    def __init__(self, observer: Optional[Callable[[Exchange], None]] = None, deadline: Optional[float] = None):
        self.observer = observer
        self.deadline = deadline

    def _send(self, method: str, path: str, raw: bytes, timeout: Optional[float]) -> tuple[int, bytes, int]:
        raise NotImplementedError

    def view(self, observer: Optional[Callable[[Exchange], None]] = None,
             deadline: Optional[float] = None) -> "Transport":
        raise NotImplementedError

    def call(self, method: str, path: str, body: Any = None, name: Optional[str] = None) -> Any:
        raw = _dump(body) if body is not None else b""
        timeout = None
        if self.deadline is not None:
            timeout = self.deadline - time.monotonic()
            if timeout <= 0:
                raise RequestTimeout("deadline passed before request")
        started = time.monotonic()
        status, payload, nbytes = self._send(method, path, raw, timeout)
        if self.observer is not None:
            self.observer(Exchange(name or path, method, path, status, len(raw), nbytes, raw,
                                   time.monotonic() - started))
        return raise_for(status, payload)

    def get(self, path: str, name: Optional[str] = None) -> Any:
        return self.call("GET", path, None, name)

    def post(self, path: str, body: Any, name: Optional[str] = None) -> Any:
        return self.call("POST", path, body, name)


class LocalTransport(Transport):
    def __init__(self, app: App, observer=None, deadline=None):
        super().__init__(observer, deadline)
        self.app = app

    def _send(self, method, path, raw, timeout):
        status, payload = self.app.dispatch(method, path, raw)
        return status, payload, len(payload)

    def view(self, observer=None, deadline=None) -> "LocalTransport":
        return LocalTransport(self.app, observer, deadline)


class HttpTransport(Transport):
    def __init__(self, base_url: str, timeout: float = 60.0, observer=None, deadline=None,
                 client: Optional[httpx.Client] = None):
        super().__init__(observer, deadline)
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.client = client or httpx.Client(
            timeout=timeout, limits=httpx.Limits(max_connections=None, max_keepalive_connections=64))

    def _send(self, method, path, raw, timeout):
        t = self.timeout if timeout is None else min(self.timeout, timeout)
        try:
            resp = self.client.request(method, self.base_url + path, content=raw or None,
                                       headers={"Content-Type": "application/json"} if raw else None,
                                       timeout=t)
        except httpx.TimeoutException as exc:
            raise RequestTimeout(str(exc) or "client timeout") from None
        except httpx.TransportError as exc:
            raise ConnectionFailure(str(exc) or type(exc).__name__) from None
        status_line = len(f"HTTP/1.1 {resp.status_code} {resp.reason_phrase}\r\n")
        headers = sum(len(k) + len(v) + 4 for k, v in resp.headers.raw) + 2
        return resp.status_code, resp.content, status_line + headers + len(resp.content)

    def view(self, observer=None, deadline=None) -> "HttpTransport":
        return HttpTransport(self.base_url, self.timeout, observer, deadline, self.client)

    def close(self) -> None:
        self.client.close()
