"""Southbound client: keeps one EES subscription alive on the UPF."""

from __future__ import annotations

import logging
import threading
from typing import Optional

from ..ees import codec
from ..ees.model import (
    EesSubscriptionRequest,
    EesSubscriptionResponse,
    EventType,
    Granularity,
    MeasurementType,
    ReportingMode,
)
from ..net import EventLog, HttpError, Unreachable, post, request, retry_with_backoff

log = logging.getLogger(__name__)

EE_PATH = "/nupf-ee/v1/ee-subscriptions"


class UpfUnreachable(Unreachable):
    pass


def collection_request(period: int, notify_uri: str) -> EesSubscriptionRequest:
    return EesSubscriptionRequest(
        frozenset({EventType.USER_DATA_USAGE_MEASURES}),
        frozenset({MeasurementType.VOLUME_MEASUREMENT, MeasurementType.THROUGHPUT_MEASUREMENT}),
        Granularity.PER_FLOW,
        ReportingMode(period),
        notify_uri,
    )


class SbiClient:
    """States: idle -> retrying -> active -> stopped."""

    def __init__(self, upf_uri: str, period: int, notify_uri: str, *, backoff_cap: float = 30.0,
                 initial_backoff: float = 0.1, events: Optional[EventLog] = None) -> None:
        self.upf_uri = upf_uri.rstrip("/")
        self.request = collection_request(period, notify_uri)
        self.backoff_cap = backoff_cap
        self.initial_backoff = initial_backoff
        self.events = events
        self.state = "idle"
        self.response: Optional[EesSubscriptionResponse] = None
        self.attempts = 0
        self.delays: list[float] = []
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self.active = threading.Event()

    @property
    def subscription_id(self) -> Optional[str]:
        return None if self.response is None else self.response.subscription_id

    def subscribe_once(self) -> EesSubscriptionResponse:
        self.attempts += 1
        try:
            status, body = post(self.upf_uri + EE_PATH, codec.encode_subscription_request(self.request))
        except Unreachable as exc:
            raise UpfUnreachable(str(exc)) from None
        if status != 201:
            raise HttpError(status, body.decode(errors="replace"))
        return codec.decode_subscription_response(body)

    def _run(self) -> None:
        self.state = "retrying"

        def on_error(exc: Exception, delay: float) -> None:
            self.delays.append(delay)
            log.info("UPF at %s unreachable, retrying in %.1fs", self.upf_uri, delay)

        try:
            resp = retry_with_backoff(self.subscribe_once, initial=self.initial_backoff, cap=self.backoff_cap,
                                      stop=self._stop, on_error=on_error)
        except Unreachable:
            self.state = "stopped"
            return
        except HttpError as exc:
            log.error("UPF refused the collection subscription: %s %s", exc.status, exc.detail)
            self.state = "failed"
            return
        self.response = resp
        self.state = "active"
        self.active.set()
        if self.events is not None:
            self.events.emit("nwdaf_sbi_subscribed", subscriptionId=resp.subscription_id,
                             period=self.request.reporting.period_seconds)

    def start(self) -> "SbiClient":
        self._thread = threading.Thread(target=self._run, name="nwdaf-sbi", daemon=True)
        self._thread.start()
        return self

    def stop(self, unsubscribe: bool = True) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2)
        if unsubscribe and self.subscription_id:
            try:
                request("DELETE", f"{self.upf_uri}{EE_PATH}/{self.subscription_id}")
            except Unreachable:
                pass
        self.state = "stopped"
