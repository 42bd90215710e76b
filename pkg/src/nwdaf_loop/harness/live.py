"""Real-time drivers: paced traffic over the UPF packet socket and ping-like probes."""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from dataclasses import dataclass
from typing import Iterator, Optional

from ..net import EventLog, recv_frame, send_frame
from .traffic import Timed, UeProfile, probe_descriptor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProbeResult:
    ue: str
    sent_at: float  # wall clock
    success: bool
    rtt: Optional[float]


def probe_loop(profile: UeProfile, address: tuple[str, int], *, timeout: float = 0.5, interval: float = 1.0,
               target: str = "8.8.8.8", stop: Optional[threading.Event] = None,
               count: Optional[int] = None) -> Iterator[ProbeResult]:
    """One PROBE per ``interval``; success iff its echo returns within ``timeout``."""
    stop = stop or threading.Event()
    sock = socket.create_connection(address, timeout=2.0)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        next_at = time.monotonic()
        sent = 0
        while not stop.is_set() and (count is None or sent < count):
            wall, t0 = time.time(), time.monotonic_ns()
            send_frame(sock, probe_descriptor(profile, target, t0).to_dict())
            sent += 1
            deadline = time.monotonic() + timeout
            ok, rtt = False, None
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                sock.settimeout(remaining)
                try:
                    frame = recv_frame(sock)
                except socket.timeout:
                    break
                if frame is None:
                    break
                echo = json.loads(frame)
                if echo.get("timestamp") == t0:  # late echoes of older probes are ignored
                    ok, rtt = True, (time.monotonic_ns() - t0) / 1e9
                    break
            yield ProbeResult(profile.ue_ipv4_addr, wall, ok, rtt)
            next_at += interval
            stop.wait(max(0.0, next_at - time.monotonic()))
    finally:
        sock.close()


class Prober(threading.Thread):
    def __init__(self, profile: UeProfile, address: tuple[str, int], *, timeout: float = 0.5,
                 interval: float = 1.0, events: Optional[EventLog] = None) -> None:
        super().__init__(name=f"probe-{profile.ue_ipv4_addr}", daemon=True)
        self.profile, self.address = profile, address
        self.timeout, self.interval = timeout, interval
        self.events = events
        self.results: list[ProbeResult] = []
        self._stop_evt = threading.Event()

    def run(self) -> None:
        for r in probe_loop(self.profile, self.address, timeout=self.timeout, interval=self.interval,
                            stop=self._stop_evt):
            self.results.append(r)
            if self.events is not None:
                self.events.emit("probe", ue=r.ue, sentAt=r.sent_at, success=r.success, rtt=r.rtt)

    def stop(self) -> None:
        self._stop_evt.set()
        self.join(timeout=3)


class TrafficDriver(threading.Thread):
    """Sends a merged, time-ordered descriptor stream at its scheduled offsets from ``start()``.

    Emits ``attack_start`` (wall time of the first bot packet actually sent) for bot UEs.
    """

    def __init__(self, address: tuple[str, int], stream: Iterator[Timed], *, bots: frozenset = frozenset(),
                 events: Optional[EventLog] = None, batch_window: float = 0.005,
                 origin: Optional[tuple[float, float]] = None) -> None:
        super().__init__(name="traffic", daemon=True)
        self.origin = origin  # (monotonic, wall) that stream offsets are relative to
        self.address = address
        self.stream = stream
        self.bots = bots
        self.events = events
        self.batch_window = batch_window
        self.sent_packets = 0
        self.sent_bytes: dict[str, int] = {}
        self.attack_start: Optional[float] = None
        self.t0_mono: Optional[float] = None
        self.t0_wall: Optional[float] = None
        self._stop_evt = threading.Event()
        self._started = threading.Event()

    def run(self) -> None:
        sock = socket.create_connection(self.address, timeout=5.0)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.t0_mono, self.t0_wall = self.origin or (time.monotonic(), time.time())
        self._started.set()
        pending: Optional[Timed] = None
        try:
            while not self._stop_evt.is_set():
                elapsed = time.monotonic() - self.t0_mono
                batch = []
                if pending is not None and pending[0] <= elapsed:
                    batch.append(pending[1])
                    pending = None
                if pending is None:
                    for t, d in self.stream:
                        if t > elapsed:
                            pending = (t, d)
                            break
                        batch.append(d)
                if batch:
                    send_frame(sock, [d.to_dict() for d in batch])
                    now = time.time()
                    for d in batch:
                        self.sent_packets += 1
                        self.sent_bytes[d.ue_ipv4_addr] = self.sent_bytes.get(d.ue_ipv4_addr, 0) + d.size_bytes
                        if self.attack_start is None and d.ue_ipv4_addr in self.bots:
                            self.attack_start = now
                            if self.events is not None:
                                self.events.emit("attack_start", ue=d.ue_ipv4_addr, at=now)
                if pending is None:
                    return  # stream exhausted
                wait = pending[0] - (time.monotonic() - self.t0_mono)
                self._stop_evt.wait(min(max(wait, 0.0), self.batch_window) if wait > 0 else 0)
        except OSError as exc:
            log.warning("traffic socket closed: %s", exc)
        finally:
            sock.close()

    def wait_started(self, timeout: float = 5.0) -> bool:
        return self._started.wait(timeout)

    def stop(self) -> None:
        self._stop_evt.set()
        self.join(timeout=3)
