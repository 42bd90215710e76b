"""Network-facing UPF: EES HTTP API, N4-like release endpoint, packet socket, notifier."""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
from typing import Callable, Optional

from ..ees import codec
from ..ees.model import CodecError, Snssai
from ..net import EventLog, HttpError, JsonServer, Pump, http_deliver, load_config, recv_frame, send_frame
from .core import AllEventsUnsupported, UnknownSession, UnknownSubscription, Upf, UpfError
from .packets import ForwardDecision, MalformedDescriptor, PacketDescriptor, PacketKind

log = logging.getLogger(__name__)

EE_BASE = "/nupf-ee/v1/ee-subscriptions"


class _IngestHandler(socketserver.BaseRequestHandler):
    """One connection: frames of descriptors (object or array) in, PROBE echoes out."""

    def handle(self) -> None:
        svc: UpfService = self.server.svc  # type: ignore[attr-defined]
        sock: socket.socket = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = recv_frame(sock)
            except OSError:
                return
            if frame is None:
                return
            try:
                doc = json.loads(frame)
            except ValueError:
                svc.malformed += 1
                continue
            echoes = []
            for d in doc if isinstance(doc, list) else [doc]:
                try:
                    p = PacketDescriptor.from_dict(d)
                except MalformedDescriptor:
                    svc.malformed += 1
                    continue
                decision = svc.upf.ingest_packet(p)
                if p.kind is PacketKind.PROBE and decision is ForwardDecision.FORWARDED:
                    echoes.append({"echo": True, "pduSessionId": p.pdu_session_id, "timestamp": p.timestamp})
            for e in echoes:
                try:
                    send_frame(sock, e)
                except OSError:
                    return


class _TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class UpfService:
    """Hosts a :class:`Upf` behind HTTP (EES + N4 release) and a TCP packet socket."""

    def __init__(
        self,
        upf: Optional[Upf] = None,
        *,
        listen_addr: str = "127.0.0.1",
        ee_port: int = 0,
        ingest_port: Optional[int] = 0,
        tick_interval: float = 0.05,
        deliver: Optional[Callable[[str, bytes], None]] = None,
        events: Optional[EventLog] = None,
    ) -> None:
        self.events = events
        self.upf = upf or Upf(on_event=self._event)
        if self.upf.on_event is None:
            self.upf.on_event = self._event
        self.malformed = 0
        self.http = JsonServer(listen_addr, ee_port, name="upf")
        self._routes()
        self.pump = Pump(self._tick, deliver or http_deliver(timeout=1.0), interval=tick_interval, name="upf-notifier")
        self._tcp: Optional[_TcpServer] = None
        if ingest_port is not None:
            self._tcp = _TcpServer((listen_addr, ingest_port), _IngestHandler)
            self._tcp.svc = self  # type: ignore[attr-defined]
        self._tcp_thread: Optional[threading.Thread] = None

    def _event(self, kind: str, **fields) -> None:
        if self.events is not None:
            self.events.emit(kind, **fields)

    def _tick(self, _now: float):
        for uri, n in self.upf.notifier_tick():
            yield uri, codec.encode_notification(n)

    def _routes(self) -> None:
        http = self.http

        @http.route("POST", EE_BASE)
        def subscribe(m, body, q):
            try:
                req = codec.decode_subscription_request(body)
            except CodecError as exc:
                raise HttpError(400, str(exc))
            try:
                resp = self.upf.handle_subscribe(req)
            except AllEventsUnsupported as exc:
                raise HttpError(403, f"no supported events requested: {exc}")
            return 201, codec.encode_subscription_response(resp)

        @http.route("DELETE", EE_BASE + r"/(?P<sid>[^/]+)")
        def unsubscribe(m, body, q):
            try:
                self.upf.handle_unsubscribe(m["sid"])
            except UnknownSubscription:
                raise HttpError(404, f"unknown subscription {m['sid']}")
            return 204, None

        @http.route("POST", r"/n4/v1/sessions/(?P<sid>\d+)/release")
        def release(m, body, q):
            try:
                return self.upf.release_pdu_session(int(m["sid"]))
            except UnknownSession:
                raise HttpError(404, f"unknown session {m['sid']}")

        @http.route("POST", r"/n4/v1/sessions")
        def establish(m, body, q):
            d = codec.loads_object(body)
            sn = d.get("snssai") or {"sst": 1}
            try:
                sess = self.upf.add_session(int(d["pduSessionId"]), d["ueIpv4Addr"], Snssai(sn["sst"], sn.get("sd")),
                                            d.get("dnn", "internet"))
            except (KeyError, TypeError) as exc:
                raise HttpError(400, f"bad session body: {exc!r}")
            except UpfError as exc:
                raise HttpError(409, str(exc))
            return 201, {"pduSessionId": sess.pdu_session_id, "state": sess.state.value}

        @http.route("GET", r"/n4/v1/sessions/(?P<sid>\d+)")
        def session(m, body, q):
            try:
                s = self.upf.session(int(m["sid"]))
            except UnknownSession:
                raise HttpError(404, f"unknown session {m['sid']}")
            return {"pduSessionId": s.pdu_session_id, "ueIpv4Addr": s.ue_ipv4_addr, "state": s.state.value,
                    "releasedAt": s.released_at, "forwardedPackets": s.forwarded_packets,
                    "forwardedBytes": s.forwarded_bytes, "droppedPackets": s.dropped_packets}

    @property
    def base_uri(self) -> str:
        return self.http.base_uri

    @property
    def ingest_address(self) -> Optional[tuple[str, int]]:
        return None if self._tcp is None else self._tcp.server_address[:2]

    def start(self) -> "UpfService":
        self.http.start()
        if self._tcp is not None:
            self._tcp_thread = threading.Thread(target=self._tcp.serve_forever, kwargs={"poll_interval": 0.05},
                                                name="upf-ingest", daemon=True)
            self._tcp_thread.start()
        self.pump.start()
        return self

    def stop(self) -> None:
        self.pump.stop()
        if self._tcp is not None:
            self._tcp.shutdown()
            self._tcp.server_close()
        self.http.stop()


def from_config(path: str, events: Optional[EventLog] = None) -> UpfService:
    """Build a service from ``upf.toml`` (listen_addr, ee_port, ingest_port, optional [[sessions]])."""
    cfg = load_config(path)
    svc = UpfService(
        listen_addr=cfg.get("listen_addr", "127.0.0.1"),
        ee_port=int(cfg.get("ee_port", 0)),
        ingest_port=int(cfg.get("ingest_port", 0)),
        events=events,
    )
    for s in cfg.get("sessions", []):
        sn = s.get("snssai", {"sst": 1})
        svc.upf.add_session(int(s["pdu_session_id"]), s["ue_ipv4_addr"], Snssai(sn["sst"], sn.get("sd")),
                            s.get("dnn", "internet"))
    return svc
