"""SMF extension: NWDAF client, notification server and session-release mitigation."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from ..ees import codec
from ..ees.model import (
    AbnormalBehaviourNotification,
    AnalyticsEventId,
    AnalyticsSubscription,
    CodecError,
    ExceptionReport,
)
from ..net import EventLog, HttpError, JsonServer, Unreachable, load_config, post, retry_with_backoff

log = logging.getLogger(__name__)

NWDAF_SUBS = "/nnwdaf-eventssubscription/v1/subscriptions"


class BindingState(str, Enum):
    ACTIVE = "ACTIVE"
    RELEASED = "RELEASED"


class UpfReleaseFailed(RuntimeError):
    pass


class NwdafUnreachable(Unreachable):
    pass


@dataclass
class UeSessionBinding:
    ue_ipv4_addr: str
    pdu_session_id: int
    state: BindingState = BindingState.ACTIVE
    released_at: Optional[float] = None


# A PCF-driven rule could replace this; the default releases every flagged UE.
MitigationPolicy = Callable[[ExceptionReport, UeSessionBinding], bool]


def release_all(report: ExceptionReport, binding: UeSessionBinding) -> bool:
    return True


def http_release(upf_uri: str, timeout: float = 1.0) -> Callable[[int], None]:
    def release(pdu_session_id: int) -> None:
        try:
            status, body = post(f"{upf_uri.rstrip('/')}/n4/v1/sessions/{pdu_session_id}/release", timeout=timeout)
        except Unreachable as exc:
            raise UpfReleaseFailed(str(exc)) from None
        if status != 200:
            raise UpfReleaseFailed(f"UPF answered {status}: {body[:200]!r}")

    return release


class Smf:
    """Bindings plus the mitigation logic; transport-free so it can be driven directly."""

    def __init__(self, bindings: list[UeSessionBinding], release: Callable[[int], None], *,
                 policy: MitigationPolicy = release_all, events: Optional[EventLog] = None,
                 clock: Callable[[], float] = time.time) -> None:
        self.bindings = {b.ue_ipv4_addr: b for b in bindings}
        self.release = release
        self.policy = policy
        self.events = events
        self.clock = clock
        self.release_calls = 0
        self.unknown_ues = 0
        self._lock = threading.Lock()  # one notification at a time
        self._pool = ThreadPoolExecutor(max_workers=4, thread_name_prefix="smf-release")

    def _emit(self, kind: str, **fields) -> None:
        if self.events is not None:
            self.events.emit(kind, **fields)

    def _release_one(self, b: UeSessionBinding) -> Optional[str]:
        self.release_calls += 1
        try:
            self.release(b.pdu_session_id)
        except UpfReleaseFailed as exc:
            log.warning("release of session %d (%s) failed, will retry: %s", b.pdu_session_id, b.ue_ipv4_addr, exc)
            self._emit("smf_release_failed", ue=b.ue_ipv4_addr, pduSessionId=b.pdu_session_id, error=str(exc))
            return None
        b.state = BindingState.RELEASED
        b.released_at = self.clock()
        self._emit("smf_released", ue=b.ue_ipv4_addr, pduSessionId=b.pdu_session_id)
        return b.ue_ipv4_addr

    def handle_nwdaf_notification(self, n: AbnormalBehaviourNotification) -> list[str]:
        """Release every ACTIVE session of a flagged UE; returns the UEs released by this call."""
        with self._lock:
            todo: dict[str, UeSessionBinding] = {}
            for report in n.exceptions:
                for ue in report.ue_ipv4_addrs:
                    b = self.bindings.get(ue)
                    if b is None:
                        self.unknown_ues += 1
                        log.warning("notification flags unknown UE %s", ue)
                        continue
                    if b.state is BindingState.ACTIVE and ue not in todo and self.policy(report, b):
                        todo[ue] = b
            if not todo:
                return []
            self._emit("smf_mitigate", ues=sorted(todo))
            done = list(self._pool.map(self._release_one, todo.values()))
            return [ue for ue in done if ue]

    def close(self) -> None:
        self._pool.shutdown(wait=False)


class SmfService:
    def __init__(self, smf: Smf, *, nwdaf_uri: Optional[str] = None, report_period_s: int = 1,
                 listen_addr: str = "127.0.0.1", port: int = 0, backoff_cap: float = 30.0) -> None:
        self.smf = smf
        self.nwdaf_uri = nwdaf_uri
        self.report_period_s = report_period_s
        self.backoff_cap = backoff_cap
        self.http = JsonServer(listen_addr, port, name="smf")
        self.subscription_id: Optional[str] = None
        self.subscribed = threading.Event()
        self.notifications = 0
        self._sub_lock = threading.Lock()
        self._stop = threading.Event()

        @self.http.route("POST", r"/smf/notify")
        def notify(m, body, q):
            try:
                n = codec.decode_abnormal_notification(body)
            except CodecError as exc:
                raise HttpError(400, str(exc))
            self.notifications += 1
            released = self.smf.handle_nwdaf_notification(n)
            return {"released": released}

    @property
    def base_uri(self) -> str:
        return self.http.base_uri

    def _subscribe_once(self) -> str:
        s = AnalyticsSubscription(AnalyticsEventId.ABNORMAL_BEHAVIOUR, self.base_uri + "/smf/notify",
                                  self.report_period_s)
        try:
            status, body = post(self.nwdaf_uri.rstrip("/") + NWDAF_SUBS, codec.encode_analytics_subscription(s))
        except Unreachable as exc:
            raise NwdafUnreachable(str(exc)) from None
        if status != 201:
            raise HttpError(status, body.decode(errors="replace"))
        return codec.decode_analytics_subscription(body).subscription_id

    def smf_subscribe(self) -> str:
        """One active subscription; repeated calls return it. Blocks (with backoff) until the NWDAF answers."""
        with self._sub_lock:
            if self.subscription_id is None:
                self.subscription_id = retry_with_backoff(self._subscribe_once, cap=self.backoff_cap, stop=self._stop)
                self.subscribed.set()
                if self.smf.events is not None:
                    self.smf.events.emit("smf_subscribed", subscriptionId=self.subscription_id)
            return self.subscription_id

    def start(self, subscribe: bool = True) -> "SmfService":
        self.http.start()
        if subscribe and self.nwdaf_uri:
            def bg():
                try:
                    self.smf_subscribe()
                except Unreachable:
                    pass

            threading.Thread(target=bg, name="smf-subscribe", daemon=True).start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self.http.stop()
        self.smf.close()


def from_config(path: str | Path, events: Optional[EventLog] = None) -> SmfService:
    """``smf.toml``: nwdaf_uri, upf_uri, report_period_s, listen_addr, [[sessions]] (ue_ipv4_addr, pdu_session_id)."""
    cfg = load_config(path)
    bindings = [UeSessionBinding(s["ue_ipv4_addr"], int(s["pdu_session_id"])) for s in cfg.get("sessions", [])]
    smf = Smf(bindings, http_release(cfg["upf_uri"]), events=events)
    host, _, port = str(cfg.get("listen_addr", "127.0.0.1:0")).partition(":")
    return SmfService(smf, nwdaf_uri=cfg.get("nwdaf_uri"), report_period_s=int(cfg.get("report_period_s", 1)),
                      listen_addr=host, port=int(port or 0))
