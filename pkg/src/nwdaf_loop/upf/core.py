"""Simulated UPF with the event exposure service.

Three roles share one object: the server side (subscribe/unsubscribe),
data preparation (``ingest_packet``, the hot path) and the client side
(``notifier_tick``, called by a timer). The subscriber map and aggregate
store are guarded by ``_lock``; notification I/O never runs under it.
"""

from __future__ import annotations

import itertools
import logging
import threading
import time
from collections import deque
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional

from ..ees.model import (
    EesNotification,
    EesSubscriptionRequest,
    EesSubscriptionResponse,
    EventFilters,
    EventType,
    Granularity,
    MeasurementType,
    Snssai,
)
from .measure import AggregateRecord, compute_measurements, merge_records, second_samples, trend_item
from .packets import (
    DOWNLINK,
    UPLINK,
    ForwardDecision,
    PacketDescriptor,
    PacketKind,
    PduSession,
    SessionState,
)

log = logging.getLogger(__name__)

FORWARDED = ForwardDecision.FORWARDED
DROPPED_RELEASED = ForwardDecision.DROPPED_RELEASED
DROPPED_NO_SESSION = ForwardDecision.DROPPED_NO_SESSION
PROBE = PacketKind.PROBE
RELEASED = SessionState.RELEASED

TREND_WINDOWS = 3


class UpfError(Exception):
    pass


class AllEventsUnsupported(UpfError):
    pass


class UnknownSubscription(UpfError, KeyError):
    pass


class UnknownSession(UpfError, KeyError):
    pass


class _Subscription:
    """SubscriptionEntry plus its slice of the aggregate store."""

    __slots__ = ("id", "response", "request", "records", "match", "window_start_ns", "window_start_wall",
                 "last_report_at", "reports_sent", "ring", "trend_history", "period_ns", "created_wall")

    def __init__(self, sid: str, response: EesSubscriptionResponse, now_ns: int, wall: float) -> None:
        self.id = sid
        self.response = response
        self.request = response.accepted
        self.records: dict = {}
        self.match: dict = {}
        self.window_start_ns = now_ns
        self.window_start_wall = wall
        self.created_wall = wall  # report boundaries fall at created_wall + k * period
        self.last_report_at = now_ns
        self.reports_sent = 0
        self.period_ns = self.request.reporting.period_seconds * 1_000_000_000
        self.ring = self.request.reporting.period_seconds + 2
        self.trend_history: dict = {}

    def matches(self, sess: PduSession) -> bool:
        f: Optional[EventFilters] = self.request.filters
        if f is None:
            return True
        if f.ue_ipv4_addr is not None and f.ue_ipv4_addr != sess.ue_ipv4_addr:
            return False
        if f.dnn is not None and f.dnn != sess.dnn:
            return False
        if f.snssai is not None:
            if f.snssai.sst != sess.snssai.sst:
                return False
            if f.snssai.sd is not None and f.snssai.sd != sess.snssai.sd:
                return False
        return True


class Upf:
    """User plane function hosting the event exposure service.

    ``ees_enabled=False`` gives the baseline variant: the ingestion path
    has no aggregation hook at all.
    """

    def __init__(
        self,
        *,
        ees_enabled: bool = True,
        supported_events: Iterable[EventType] = tuple(EventType),
        supported_measurements: Iterable[MeasurementType] = tuple(MeasurementType),
        clock: Callable[[], int] = time.monotonic_ns,
        wall_clock: Callable[[], float] = time.time,
        on_event: Optional[Callable[..., None]] = None,
    ) -> None:
        self.ees_enabled = ees_enabled
        self.supported_events = frozenset(supported_events)
        self.supported_measurements = frozenset(supported_measurements)
        self.clock = clock
        self.wall_clock = wall_clock
        self.on_event = on_event
        self._lock = threading.Lock()
        self._sessions: dict[int, PduSession] = {}
        self._subs: dict[str, _Subscription] = {}
        self._sub_list: list[_Subscription] = []  # copy-on-write snapshot read by the hot path
        self._ids = itertools.count(1)
        self._instance = f"{int(wall_clock() * 1000) % 10**8:08d}"
        self._refresh_subs()

    # -- sessions ---------------------------------------------------------

    def add_session(self, pdu_session_id: int, ue_ipv4_addr: str, snssai: Snssai = Snssai(1), dnn: str = "internet") -> PduSession:
        with self._lock:
            existing = self._sessions.get(pdu_session_id)
            if existing is not None:
                if existing.state is RELEASED:
                    raise UpfError(f"session {pdu_session_id} was released and cannot be re-established")
                raise UpfError(f"session {pdu_session_id} already exists")
            sess = PduSession(pdu_session_id, ue_ipv4_addr, snssai, dnn)
            self._sessions[pdu_session_id] = sess
            for sub in self._sub_list:
                sub.match.pop(pdu_session_id, None)
            return sess

    def session(self, pdu_session_id: int) -> PduSession:
        try:
            return self._sessions[pdu_session_id]
        except KeyError:
            raise UnknownSession(pdu_session_id) from None

    def sessions(self) -> list[PduSession]:
        return list(self._sessions.values())

    def release_pdu_session(self, pdu_session_id: int) -> dict:
        """Release a session; later packets of it are dropped. Idempotent."""
        with self._lock:
            sess = self._sessions.get(pdu_session_id)
            if sess is None:
                raise UnknownSession(pdu_session_id)
            if sess.state is RELEASED:
                return {"pduSessionId": pdu_session_id, "released": True, "alreadyReleased": True}
            sess.state = RELEASED
            sess.released_at = self.wall_clock()
        if self.on_event is not None:
            self.on_event("upf_session_released", pduSessionId=pdu_session_id, ue=sess.ue_ipv4_addr)
        return {"pduSessionId": pdu_session_id, "released": True, "alreadyReleased": False}

    # -- server module ----------------------------------------------------

    def handle_subscribe(self, req: EesSubscriptionRequest) -> EesSubscriptionResponse:
        events = req.event_types & self.supported_events
        if not events:
            raise AllEventsUnsupported(sorted(e.value for e in req.event_types))
        measurements = req.measurement_types & self.supported_measurements
        if not measurements:
            # nothing (supported) asked for: report everything we can
            measurements = self.supported_measurements
        accepted = EesSubscriptionRequest(events, measurements, req.granularity, req.reporting, req.notify_uri, req.filters)
        with self._lock:
            sid = f"upf-{self._instance}-{next(self._ids)}"
            resp = EesSubscriptionResponse(sid, accepted)
            sub = _Subscription(sid, resp, self.clock(), self.wall_clock())
            self._subs[sid] = sub
            self._refresh_subs()
        if self.on_event is not None:
            self.on_event("upf_subscribed", subscriptionId=sid, period=accepted.reporting.period_seconds,
                          windowStart=sub.created_wall)
        return resp

    def handle_unsubscribe(self, subscription_id: str) -> dict:
        with self._lock:
            if self._subs.pop(subscription_id, None) is None:
                raise UnknownSubscription(subscription_id)
            self._refresh_subs()
        return {"subscriptionId": subscription_id, "deleted": True}

    def subscription(self, subscription_id: str) -> _Subscription:
        try:
            return self._subs[subscription_id]
        except KeyError:
            raise UnknownSubscription(subscription_id) from None

    @property
    def subscription_ids(self) -> list[str]:
        return list(self._subs)

    def aggregate_count(self) -> int:
        return sum(len(s.records) for s in self._sub_list)

    # -- data preparation module (hot path) -------------------------------

    def _ingest_baseline(self, p: PacketDescriptor) -> ForwardDecision:
        sess = self._sessions.get(p.pdu_session_id)
        if sess is None:
            return DROPPED_NO_SESSION
        if sess.state is RELEASED:
            sess.dropped_packets += 1
            return DROPPED_RELEASED
        sess.forwarded_packets += 1
        sess.forwarded_bytes += p.size_bytes
        return FORWARDED

    def _refresh_subs(self) -> None:
        """Publish the subscriber snapshot and pick the hot path (caller holds the lock)."""
        self._sub_list = list(self._subs.values())
        # with no subscriber the per-packet path is exactly the baseline one
        hook = self.ees_enabled and bool(self._sub_list)
        self.ingest_packet = self._ingest_aggregating if hook else self._ingest_baseline  # type: ignore[method-assign]

    def ingest_packet(self, p: PacketDescriptor) -> ForwardDecision:
        """Forward one descriptor, feeding the aggregate store when anyone is subscribed."""
        return self._ingest_aggregating(p) if self.ees_enabled and self._sub_list else self._ingest_baseline(p)

    def _ingest_aggregating(self, p: PacketDescriptor) -> ForwardDecision:
        sess = self._sessions.get(p.pdu_session_id)
        if sess is None:
            return DROPPED_NO_SESSION
        if sess.state is RELEASED:
            sess.dropped_packets += 1
            return DROPPED_RELEASED
        if self._sub_list:
            self._aggregate(p, sess)
        sess.forwarded_packets += 1
        sess.forwarded_bytes += p.size_bytes
        return FORWARDED

    def _aggregate(self, p: PacketDescriptor, sess: PduSession) -> None:
        f = p.flow
        uplink = p.direction is UPLINK
        if uplink:
            key = (p.pdu_session_id, (f.src_ip, f.dst_ip, f.src_port, f.dst_port))
        else:
            key = (p.pdu_session_id, (f.dst_ip, f.src_ip, f.dst_port, f.src_port))
        size = p.size_bytes
        now = self.clock()
        with self._lock:
            for sub in self._sub_list:
                m = sub.match.get(p.pdu_session_id)
                if m is None:
                    m = sub.match[p.pdu_session_id] = sub.matches(sess)
                if not m:
                    continue
                rec = sub.records.get(key)
                if rec is None:
                    rec = sub.records[key] = AggregateRecord(sub.ring)
                rec.add((now - sub.window_start_ns) // 1_000_000_000, uplink, size, now)

    def ingest_batch(self, packets: Iterable[PacketDescriptor]) -> list[ForwardDecision]:
        ingest = self.ingest_packet
        return [ingest(p) for p in packets]

    # -- client module ----------------------------------------------------

    def notifier_tick(self, now_ns: Optional[int] = None) -> list[tuple[str, EesNotification]]:
        """Emit the notifications of every subscription whose period has elapsed."""
        now_ns = self.clock() if now_ns is None else now_ns
        wall = self.wall_clock()
        due: list[tuple[_Subscription, dict, int, float, bool]] = []
        with self._lock:
            for sub in list(self._sub_list):
                expiry = sub.request.reporting.expiry
                if expiry is not None and wall >= expiry.timestamp():
                    self._drop_locked(sub.id)
                    continue
                if now_ns - sub.last_report_at < sub.period_ns:
                    continue
                records, sub.records = sub.records, {}
                window_ns = now_ns - sub.window_start_ns
                start_wall = sub.window_start_wall
                sub.window_start_ns = now_ns
                sub.window_start_wall = wall
                sub.last_report_at += sub.period_ns
                if now_ns - sub.last_report_at >= sub.period_ns:
                    sub.last_report_at = now_ns  # fell behind; resynchronise
                sub.reports_sent += 1
                max_reports = sub.request.reporting.max_reports
                last = max_reports is not None and sub.reports_sent >= max_reports
                if last:
                    self._drop_locked(sub.id)
                due.append((sub, records, window_ns, start_wall, last))
            sessions = dict(self._sessions)
        out: list[tuple[str, EesNotification]] = []
        for sub, records, window_ns, start_wall, _ in due:
            out.extend(self._build_reports(sub, records, window_ns / 1e9, start_wall, wall, sessions))
        return out

    def _drop_locked(self, sid: str) -> None:
        self._subs.pop(sid, None)
        self._refresh_subs()

    def _build_reports(self, sub: _Subscription, records: dict, window_s: float, start_wall: float,
                       wall: float, sessions: dict) -> list[tuple[str, EesNotification]]:
        req = sub.request
        by_session: dict[int, list] = {}
        for (sid, flow), rec in sorted(records.items()):
            by_session.setdefault(sid, []).append((flow, rec))
        for sid, sess in sessions.items():
            if sess.state is not RELEASED and sid not in by_session and sub.matches(sess):
                by_session[sid] = []  # heartbeat: matching session, idle window
        start = datetime.fromtimestamp(min(start_wall, wall), timezone.utc)
        stamp = datetime.fromtimestamp(wall, timezone.utc)
        window = max(window_s, 1e-9)

        history = sub.trend_history
        if EventType.USER_DATA_USAGE_TRENDS in req.event_types:
            seen = set()
            for sid, flows in by_session.items():
                if req.granularity is Granularity.PER_SESSION:
                    merged = merge_records([r for _, r in flows]) if flows else AggregateRecord(1)
                    keys = [((sid, None), merged)]
                else:
                    keys = [((sid, flow), rec) for flow, rec in flows]
                for k, rec in keys:
                    seen.add(k)
                    history.setdefault(k, deque(maxlen=TREND_WINDOWS)).append(second_samples(rec, window))
            for k in list(history):
                if k not in seen:
                    history[k].append(([0] * max(1, round(window)), [0] * max(1, round(window))))

        out = []
        for sid in sorted(by_session):
            flows = by_session[sid]
            sess = sessions.get(sid)
            if sess is None:
                continue
            for event in sorted(req.event_types, key=lambda e: e.value):
                items = []
                if event is EventType.USER_DATA_USAGE_MEASURES:
                    if req.granularity is Granularity.PER_FLOW:
                        items = [compute_measurements(rec, window, Granularity.PER_FLOW, req.measurement_types, flow)
                                 for flow, rec in flows]
                    elif flows:
                        items = [compute_measurements(merge_records(r for _, r in flows), window,
                                                      Granularity.PER_SESSION, req.measurement_types)]
                else:
                    if req.granularity is Granularity.PER_FLOW:
                        items = [trend_item(history[(sid, flow)], Granularity.PER_FLOW, flow) for flow, _ in flows]
                    elif flows:
                        items = [trend_item(history[(sid, None)], Granularity.PER_SESSION)]
                n = EesNotification(
                    event_type=event,
                    ue_ipv4_addr=sess.ue_ipv4_addr,
                    snssai=sess.snssai,
                    time_stamp=stamp,
                    start_time=start,
                    items=items,
                    subscription_id=sub.id,
                )
                out.append((req.notify_uri, n))
        return out
