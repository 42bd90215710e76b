"""NWDAF: report collection (SBI), analytics subscriptions and periodic dispatch (NBI)."""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..ees import codec
from ..ees.model import (
    AbnormalBehaviourNotification,
    AnalyticsEventId,
    AnalyticsSubscription,
    CodecError,
    ExceptionReport,
    UnknownEnumToken,
    utc_now,
)
from ..engine.detect import DEFAULT_THRESHOLD, Detections, Label, NoModelAvailable, analyze_window
from ..net import EventLog, HttpError, JsonServer, Pump, Unreachable, http_deliver, load_config, post, retry_with_backoff
from ..upf.measure import parse_pack_filt_id
from .sbi import SbiClient
from .store import ReportStore, StoredUsageReport

log = logging.getLogger(__name__)

SUBS = "/nnwdaf-eventssubscription/v1/subscriptions"
ANALYTICS = "/nnwdaf-analyticsinfo/v1/analytics"
ML_SUBS = "/nnwdaf-mlmodelprovision/v1/subscriptions"


class UnsupportedEventId(ValueError):
    pass


@dataclass
class _Consumer:
    sub: AnalyticsSubscription
    next_due: float
    sent: int = 0


@dataclass
class ModelBinding:
    inference_uri: Optional[str] = None
    name: Optional[str] = None
    version: Optional[int] = None
    updates: int = 0


class NwdafService:
    def __init__(
        self,
        *,
        upf_uri: Optional[str] = None,
        collection_period_s: int = 1,
        store_path: Optional[str | Path] = None,
        ml_provision_uri: Optional[str] = None,
        listen_addr: str = "127.0.0.1",
        port: int = 0,
        events: Optional[EventLog] = None,
        threshold: float = DEFAULT_THRESHOLD,
        window_s: Optional[float] = None,
        tick_interval: float = 0.05,
        engine: Callable[..., Detections] = analyze_window,
        clock: Callable[[], float] = time.monotonic,
        wall_clock: Callable[[], float] = time.time,
    ) -> None:
        self.events = events
        self.store = ReportStore(store_path, on_append=self._stored)
        self.http = JsonServer(listen_addr, port, name="nwdaf")
        self.upf_uri = upf_uri
        self.collection_period_s = collection_period_s
        self.ml_provision_uri = ml_provision_uri
        self.threshold = threshold
        self.window_s = window_s
        self.engine = engine
        self.clock = clock
        self.wall_clock = wall_clock
        self.started_wall = wall_clock()
        self.model = ModelBinding()
        self.sbi: Optional[SbiClient] = None
        self.engine_errors = 0
        self.rejected_reports = 0
        self.duplicates = 0
        self._consumers: dict[str, _Consumer] = {}
        self._lock = threading.Lock()
        self._ids = 0
        self._stop = threading.Event()
        self.pump = Pump(self._tick, http_deliver(timeout=1.0), interval=tick_interval, name="nwdaf-nbi")
        self._routes()

    # -- events ---------------------------------------------------------------

    def _emit(self, kind: str, **fields) -> None:
        if self.events is not None:
            self.events.emit(kind, **fields)

    def _stored(self, r: StoredUsageReport) -> None:
        if self.events is None:
            return
        n = r.notification
        remotes = sorted({parse_pack_filt_id(i.flow_info.pack_filt_id).dst_ip for i in n.items if i.flow_info})
        self.events.emit("nwdaf_report_stored", ue=n.ue_ipv4_addr, subscriptionId=n.subscription_id,
                         timeStamp=n.time_stamp.timestamp(), remotes=remotes)

    # -- SBI --------------------------------------------------------------------

    def handle_upf_notification(self, body: bytes) -> bool:
        """Decode and store; returns False for a duplicate. Raises CodecError on bad bodies."""
        try:
            n = codec.decode_notification(body)
        except CodecError:
            self.rejected_reports += 1
            raise
        stored = self.store.append(n, source=n.subscription_id or "upf")
        if stored is None:
            self.duplicates += 1
        return stored is not None

    # -- NBI --------------------------------------------------------------------

    def handle_analytics_subscribe(self, s: AnalyticsSubscription) -> str:
        if s.event_id is not AnalyticsEventId.ABNORMAL_BEHAVIOUR:
            raise UnsupportedEventId(s.event_id)
        with self._lock:
            self._ids += 1
            sid = f"nwdaf-sub-{self._ids}"
            sub = AnalyticsSubscription(s.event_id, s.notify_uri, s.period_seconds, s.exception_ids, sid)
            self._consumers[sid] = _Consumer(sub, self.clock() + s.period_seconds)
        self._emit("nwdaf_consumer_subscribed", subscriptionId=sid, period=s.period_seconds)
        return sid

    def handle_analytics_unsubscribe(self, sid: str) -> bool:
        with self._lock:
            return self._consumers.pop(sid, None) is not None

    def analysis_window(self) -> tuple[float, float]:
        end = self.wall_clock()
        start = self.started_wall if self.window_s is None else end - self.window_s
        return start, end

    def run_engine(self) -> Detections:
        window = self.analysis_window()
        res = self.engine(window, self.model.inference_uri, self.store, threshold=self.threshold)
        for r in res:
            self._emit("nwdaf_detection", ue=r.ue_ipv4_addr, label=r.label.value, confidence=r.confidence,
                       inferenceSeconds=res.inference_s, modelVersion=res.model_version)
        return res

    @staticmethod
    def wrap(sub: AnalyticsSubscription, results: Detections) -> AbnormalBehaviourNotification:
        grouped: dict = {}
        for r in results:
            if r.label is not Label.ANOMALOUS:
                continue
            if sub.exception_ids is not None and r.excep_id not in sub.exception_ids:
                continue
            grouped.setdefault(r.excep_id, []).append(r)
        exceptions = tuple(
            ExceptionReport(eid, [r.ue_ipv4_addr for r in rs], (), [r.confidence for r in rs])
            for eid, rs in grouped.items()
        )
        return AbnormalBehaviourNotification(sub.subscription_id, utc_now(), exceptions)

    def nbi_dispatch_tick(self, now: Optional[float] = None) -> list[tuple[str, AbnormalBehaviourNotification]]:
        now = self.clock() if now is None else now
        with self._lock:
            due = [c for c in self._consumers.values() if now >= c.next_due]
            for c in due:
                c.next_due += c.sub.period_seconds
                if c.next_due <= now:
                    c.next_due = now + c.sub.period_seconds
        out = []
        for c in due:
            try:
                results = self.run_engine()
            except NoModelAvailable as exc:
                self.engine_errors += 1
                log.info("analysis skipped: %s", exc)
                continue
            if results.error:
                self.engine_errors += 1
                log.warning("analysis failed: %s", results.error)
                continue
            n = self.wrap(c.sub, results)
            c.sent += 1
            self._emit("nwdaf_notify", subscriptionId=c.sub.subscription_id,
                       flagged=sorted(n.flagged_ues()))
            out.append((c.sub.notify_uri, n))
        return out

    def _tick(self, now: float):
        for uri, n in self.nbi_dispatch_tick(now):
            yield uri, codec.encode_abnormal_notification(n)

    # -- model provisioning ------------------------------------------------------

    def bind_model(self, doc: dict) -> None:
        m = doc.get("model") or {}
        with self._lock:
            self.model.inference_uri = doc["inferenceUri"]
            self.model.name = m.get("name")
            self.model.version = m.get("version")
            self.model.updates += 1
        self._emit("nwdaf_model_bound", model=self.model.name, version=self.model.version)

    def _subscribe_models(self) -> None:
        body = {"eventId": AnalyticsEventId.ABNORMAL_BEHAVIOUR.value, "notifyUri": self.base_uri + "/mlprov/notify"}

        def attempt():
            status, data = post(self.ml_provision_uri.rstrip("/") + ML_SUBS, body)
            if status != 201:
                raise HttpError(status, data.decode(errors="replace"))
            return json.loads(data)

        try:
            resp = retry_with_backoff(attempt, cap=30.0, stop=self._stop)
        except (Unreachable, HttpError) as exc:
            log.error("model subscription failed: %s", exc)
            return
        if resp.get("current"):
            self.bind_model(resp["current"])

    # -- HTTP ---------------------------------------------------------------------

    def _routes(self) -> None:
        http = self.http

        @http.route("POST", r"/sbi/notify")
        def sbi_notify(m, body, q):
            try:
                self.handle_upf_notification(body)
            except CodecError as exc:
                raise HttpError(400, str(exc))
            return 204, None

        @http.route("POST", SUBS)
        def subscribe(m, body, q):
            try:
                s = codec.decode_analytics_subscription(body)
                sid = self.handle_analytics_subscribe(s)
            except UnknownEnumToken as exc:
                raise HttpError(400, f"UnsupportedEventId: {exc}" if exc.field == "eventId" else str(exc))
            except UnsupportedEventId as exc:
                raise HttpError(400, f"UnsupportedEventId: {exc}")
            except CodecError as exc:
                raise HttpError(400, str(exc))
            doc = codec.analytics_subscription_to_dict(self._consumers[sid].sub)
            return 201, doc

        @http.route("DELETE", SUBS + r"/(?P<sid>[^/]+)")
        def unsubscribe(m, body, q):
            if not self.handle_analytics_unsubscribe(m["sid"]):
                raise HttpError(404, "unknown subscription")
            return 204, None

        @http.route("GET", ANALYTICS)
        def one_shot(m, body, q):
            event = q.get("event-id")
            if event != AnalyticsEventId.ABNORMAL_BEHAVIOUR.value:
                raise HttpError(400, f"UnsupportedEventId: {event!r}")
            try:
                results = self.run_engine()
            except NoModelAvailable as exc:
                raise HttpError(503, str(exc))
            if results.error:
                raise HttpError(503, results.error)
            sub = AnalyticsSubscription(AnalyticsEventId.ABNORMAL_BEHAVIOUR, "http://unused.invalid/", 1,
                                        subscription_id="one-shot")
            return codec.abnormal_to_dict(self.wrap(sub, results))

        @http.route("POST", r"/mlprov/notify")
        def ml_notify(m, body, q):
            doc = json.loads(body or b"{}")
            if not isinstance(doc, dict) or "inferenceUri" not in doc:
                raise HttpError(400, "missing inferenceUri")
            self.bind_model(doc)
            return 204, None

    # -- lifecycle ---------------------------------------------------------------------

    @property
    def base_uri(self) -> str:
        return self.http.base_uri

    def start(self) -> "NwdafService":
        self.http.start()
        if self.ml_provision_uri:
            threading.Thread(target=self._subscribe_models, name="nwdaf-mlsub", daemon=True).start()
        if self.upf_uri:
            self.sbi = SbiClient(self.upf_uri, self.collection_period_s, self.base_uri + "/sbi/notify",
                                 events=self.events).start()
        self.pump.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self.pump.stop()
        if self.sbi is not None:
            self.sbi.stop()
        self.http.stop()
        self.store.close()


def from_config(path: str | Path, events: Optional[EventLog] = None) -> NwdafService:
    """``nwdaf.toml``: upf_uri, collection_period_s, store_path, ml_provision_uri, listen_addr."""
    cfg = load_config(path)
    host, _, port = str(cfg.get("listen_addr", "127.0.0.1:0")).partition(":")
    return NwdafService(upf_uri=cfg.get("upf_uri"), collection_period_s=int(cfg.get("collection_period_s", 1)),
                        store_path=cfg.get("store_path"), ml_provision_uri=cfg.get("ml_provision_uri"),
                        listen_addr=host, port=int(port or 0), events=events,
                        threshold=float(cfg.get("threshold", DEFAULT_THRESHOLD)))
