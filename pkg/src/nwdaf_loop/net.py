"""Small HTTP/TCP plumbing shared by the simulated network functions.

Everything here is stdlib: a threaded JSON HTTP server with a regex router,
a blocking JSON client, length-prefixed framing for the packet socket, a
periodic notification pump, and the cross-service event log.
"""

from __future__ import annotations

import json
import logging
import re
import socket
import struct
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable, Iterable, Optional

log = logging.getLogger(__name__)


class HttpError(Exception):
    """Raised by route handlers to produce a non-2xx response."""

    def __init__(self, status: int, detail: str = "") -> None:
        super().__init__(detail)
        self.status = status
        self.detail = detail


class Unreachable(ConnectionError):
    pass


Handler = Callable[[re.Match, bytes, dict], Any]


class JsonServer:
    """Threaded HTTP server dispatching on (method, path regex).

    A handler returns ``(status, body)`` or just ``body``; ``body`` may be
    bytes (sent as-is), ``None`` (empty) or any JSON-serialisable value.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0, name: str = "svc") -> None:
        self.name = name
        self._routes: list[tuple[str, re.Pattern, Handler]] = []
        server = self

        class _Req(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt: str, *args: Any) -> None:
                log.debug("%s %s", server.name, fmt % args)

            def _dispatch(self) -> None:
                parsed = urllib.parse.urlsplit(self.path)
                length = int(self.headers.get("Content-Length") or 0)
                body = self.rfile.read(length) if length else b""
                query = dict(urllib.parse.parse_qsl(parsed.query))
                status, payload = 404, {"detail": f"no route for {self.command} {parsed.path}"}
                for method, pattern, handler in server._routes:
                    if method != self.command:
                        continue
                    m = pattern.fullmatch(parsed.path)
                    if m is None:
                        continue
                    try:
                        result = handler(m, body, query)
                        status, payload = result if isinstance(result, tuple) else (200, result)
                    except HttpError as exc:
                        status, payload = exc.status, {"detail": exc.detail}
                    except ValueError as exc:
                        status, payload = 400, {"detail": str(exc)}
                    except Exception as exc:  # pragma: no cover - defensive
                        log.exception("%s handler failed", server.name)
                        status, payload = 500, {"detail": repr(exc)}
                    break
                if payload is None:
                    data = b""
                elif isinstance(payload, (bytes, bytearray)):
                    data = bytes(payload)
                else:
                    data = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            do_GET = do_POST = do_DELETE = do_PUT = _dispatch

        self._httpd = ThreadingHTTPServer((host, port), _Req)
        self._httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    def route(self, method: str, pattern: str) -> Callable[[Handler], Handler]:
        def deco(fn: Handler) -> Handler:
            self._routes.append((method.upper(), re.compile(pattern), fn))
            return fn

        return deco

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def host(self) -> str:
        return self._httpd.server_address[0]

    @property
    def base_uri(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "JsonServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05}, name=f"{self.name}-http", daemon=True
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2)


def request(method: str, url: str, body: Any = None, timeout: float = 1.0) -> tuple[int, bytes]:
    """Blocking HTTP call returning (status, body); raises Unreachable on transport errors."""
    if body is not None and not isinstance(body, (bytes, bytearray)):
        body = json.dumps(body).encode()
    req = urllib.request.Request(url, data=body, method=method.upper())
    if body is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except (urllib.error.URLError, OSError) as exc:
        raise Unreachable(f"{method} {url}: {exc}") from None


def post(url: str, body: Any = None, timeout: float = 1.0) -> tuple[int, bytes]:
    return request("POST", url, body, timeout)


def get_json(url: str, timeout: float = 1.0) -> Any:
    status, data = request("GET", url, None, timeout)
    if status >= 300:
        raise HttpError(status, data.decode(errors="replace"))
    return json.loads(data) if data else None


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


def retry_with_backoff(
    fn: Callable[[], Any],
    *,
    initial: float = 0.1,
    cap: float = 30.0,
    stop: Optional[threading.Event] = None,
    on_error: Optional[Callable[[Exception, float], None]] = None,
) -> Any:
    """Call ``fn`` until it returns without raising Unreachable; exponential backoff capped at ``cap``."""
    delay = initial
    while True:
        try:
            return fn()
        except Unreachable as exc:
            if on_error is not None:
                on_error(exc, delay)
            if stop is not None:
                if stop.wait(delay):
                    raise
            else:
                time.sleep(delay)
            delay = min(cap, delay * 2)


# -- length-prefixed frames --------------------------------------------------

_LEN = struct.Struct("!I")


def send_frame(sock: socket.socket, obj: Any) -> None:
    data = json.dumps(obj, separators=(",", ":")).encode()
    sock.sendall(_LEN.pack(len(data)) + data)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return bytes(buf)


def recv_frame(sock: socket.socket) -> Optional[bytes]:
    """Next frame payload, or None at EOF."""
    head = _recv_exact(sock, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    return _recv_exact(sock, n)


# -- periodic delivery -------------------------------------------------------

class Pump:
    """Runs ``tick(now)`` on a fixed cadence and delivers what it returns.

    ``tick`` yields ``(uri, payload_bytes)`` pairs. Delivery happens outside
    whatever lock ``tick`` takes. A failed delivery is retried once on the
    next round, then dropped.
    """

    def __init__(
        self,
        tick: Callable[[float], Iterable[tuple[str, bytes]]],
        deliver: Callable[[str, bytes], None],
        interval: float = 0.05,
        name: str = "pump",
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.tick = tick
        self.deliver = deliver
        self.interval = interval
        self.name = name
        self.clock = clock
        self.delivered = 0
        self.failed = 0
        self.dropped = 0
        self._retry: list[tuple[str, bytes]] = []
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def run_once(self) -> None:
        retry, self._retry = self._retry, []
        for uri, payload in retry:
            try:
                self.deliver(uri, payload)
                self.delivered += 1
            except Exception as exc:
                self.dropped += 1
                log.warning("%s: dropping notification to %s after retry: %s", self.name, uri, exc)
        for uri, payload in self.tick(self.clock()):
            try:
                self.deliver(uri, payload)
                self.delivered += 1
            except Exception as exc:
                self.failed += 1
                log.info("%s: delivery to %s failed (%s); retrying next tick", self.name, uri, exc)
                self._retry.append((uri, payload))

    def _loop(self) -> None:
        next_at = self.clock()
        while not self._stop.is_set():
            try:
                self.run_once()
            except Exception:  # pragma: no cover - keep the timer alive
                log.exception("%s tick failed", self.name)
            next_at += self.interval
            delay = next_at - self.clock()
            if delay < 0:
                next_at = self.clock()
                delay = 0
            self._stop.wait(delay)

    def start(self) -> "Pump":
        self._thread = threading.Thread(target=self._loop, name=self.name, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)


def http_deliver(timeout: float = 1.0) -> Callable[[str, bytes], None]:
    def deliver(uri: str, payload: bytes) -> None:
        status, body = post(uri, payload, timeout=timeout)
        if status >= 300:
            raise HttpError(status, body.decode(errors="replace"))

    return deliver


# -- event log ---------------------------------------------------------------

class EventLog:
    """Serialized sink of timestamped cross-service events.

    Entries carry wall-clock ``t`` (comparable across processes on one host)
    and a per-process monotonic ``mono``.  Optionally mirrored to JSONL.
    """

    def __init__(self, path: Optional[str | Path] = None, source: str = "") -> None:
        self.source = source
        self._lock = threading.Lock()
        self._events: list[dict] = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def emit(self, kind: str, **fields: Any) -> dict:
        with self._lock:
            event = {"t": time.time(), "mono": time.monotonic(), "kind": kind}
            if self.source:
                event["source"] = self.source
            event.update(fields)
            self._events.append(event)
            if self._fh is not None:
                self._fh.write(json.dumps(event) + "\n")
                self._fh.flush()
            return event

    def events(self, kind: Optional[str] = None) -> list[dict]:
        with self._lock:
            return [e for e in self._events if kind is None or e["kind"] == kind]

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_events(paths: Iterable[str | Path]) -> list[dict]:
    out: list[dict] = []
    for p in paths:
        with open(p, encoding="utf-8") as fh:
            out.extend(json.loads(line) for line in fh if line.strip())
    out.sort(key=lambda e: e["t"])
    return out


def load_config(path: str | Path) -> dict:
    try:
        import tomllib  # type: ignore[import-not-found]
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib  # type: ignore[no-redef]

    with open(path, "rb") as fh:
        return tomllib.load(fh)
