"""Versioned model registry with subscribe/notify."""

from __future__ import annotations

import itertools
import json
import logging
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from ..ees.model import AnalyticsEventId, is_http_uri, utc_now
from ..ees.codec import format_timestamp
from .forest import ForestModel, ModelDescriptor

log = logging.getLogger(__name__)


class UnknownModel(KeyError):
    pass


@dataclass
class MlSubscription:
    event_id: AnalyticsEventId
    notify_uri: str
    filters: dict = field(default_factory=dict)
    subscription_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {"subscriptionId": self.subscription_id, "eventId": self.event_id.value,
                "filters": self.filters, "notifyUri": self.notify_uri}

    @classmethod
    def from_dict(cls, d: dict) -> "MlSubscription":
        if not isinstance(d, dict):
            raise ValueError("subscription must be an object")
        uri = d.get("notifyUri")
        if not isinstance(uri, str) or not is_http_uri(uri):
            raise ValueError(f"notifyUri must be an absolute http(s) URI, got {uri!r}")
        filters = d.get("filters") or {}
        if not isinstance(filters, dict):
            raise ValueError("filters must be an object")
        return cls(AnalyticsEventId(d.get("eventId")), uri, filters)


def _matches(desc: ModelDescriptor, event_id: AnalyticsEventId, filters: dict) -> bool:
    if desc.event_id is not event_id:
        return False
    doc = desc.to_dict()
    return all(k in doc and str(doc[k]) == str(v) for k, v in filters.items())


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


Notifier = Callable[[str, dict], None]


class Registry:
    """Directory of ``<name>-v<version>.json`` files plus an in-memory index.

    Writes are serialized; notifications fan out after the write lock is
    released through ``notify(uri, payload)``.
    """

    def __init__(self, directory: Optional[str | Path] = None, *, notify: Optional[Notifier] = None,
                 inference_url: Callable[[ModelDescriptor], str] = lambda d: f"/models/{d.name}/{d.version}:infer",
                 clock: Callable = utc_now) -> None:
        self.dir = Path(directory) if directory else None
        self.notify = notify or (lambda uri, payload: None)
        self.inference_url = inference_url
        self.clock = clock
        self._lock = threading.Lock()
        self._models: dict[tuple[str, int], ForestModel] = {}
        self._subs: dict[str, MlSubscription] = {}
        self._ids = itertools.count(1)
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            for p in sorted(self.dir.glob("*-v*.json")):
                m = ForestModel.loads(p.read_text(encoding="utf-8"))
                self._models[(m.descriptor.name, m.descriptor.version)] = m

    # -- models -------------------------------------------------------------

    def latest_version(self, name: str) -> int:
        return max((v for n, v in self._models if n == name), default=0)

    def register_model(self, model: ForestModel) -> ModelDescriptor:
        model.validate()
        with self._lock:
            d = model.descriptor
            stored = ForestModel(model.trees, ModelDescriptor(d.name, d.feature_schema, d.event_id,
                                                              self.latest_version(d.name) + 1,
                                                              format_timestamp(self.clock()), dict(d.metrics)),
                                 model.num_classes)
            desc = stored.descriptor
            if self.dir is not None:
                _write_atomic(self.dir / f"{desc.name}-v{desc.version}.json", stored.dumps())
            self._models[(desc.name, desc.version)] = stored
            targets = [s for s in self._subs.values() if _matches(desc, s.event_id, s.filters)]
        log.info("registered %s v%d; notifying %d subscriber(s)", desc.name, desc.version, len(targets))
        for s in targets:
            self._send(s, desc)
        return desc

    def get(self, name: str, version: int) -> ForestModel:
        try:
            return self._models[(name, int(version))]
        except (KeyError, ValueError):
            raise UnknownModel(f"{name} v{version}") from None

    def query_models(self, event_id: AnalyticsEventId, filters: Optional[dict] = None) -> list[ModelDescriptor]:
        """Matching descriptors grouped by name, newest version first."""
        filters = filters or {}
        with self._lock:
            found = [m.descriptor for m in self._models.values() if _matches(m.descriptor, event_id, filters)]
        return sorted(found, key=lambda d: (d.name, -d.version))

    # -- subscriptions --------------------------------------------------------

    def _current(self, s: MlSubscription) -> Optional[ModelDescriptor]:
        found = [m.descriptor for m in self._models.values() if _matches(m.descriptor, s.event_id, s.filters)]
        return max(found, key=lambda d: (d.created_at or "", d.version), default=None)

    def payload(self, s: MlSubscription, desc: ModelDescriptor) -> dict:
        return {"subscriptionId": s.subscription_id, "eventId": s.event_id.value,
                "model": desc.to_dict(), "inferenceUri": self.inference_url(desc)}

    def _send(self, s: MlSubscription, desc: ModelDescriptor) -> None:
        try:
            self.notify(s.notify_uri, self.payload(s, desc))
        except Exception as exc:
            log.warning("model update to %s failed: %s", s.notify_uri, exc)

    def subscribe_models(self, s: MlSubscription, *, notify_now: bool = True) -> tuple[str, Optional[dict]]:
        """Register ``s``; if a model already matches, the latest is returned and pushed to the subscriber."""
        with self._lock:
            s.subscription_id = f"mlsub-{next(self._ids)}"
            self._subs[s.subscription_id] = s
            current = self._current(s)
        if current is None:
            return s.subscription_id, None
        if notify_now:
            self._send(s, current)
        return s.subscription_id, self.payload(s, current)

    def unsubscribe(self, subscription_id: str) -> bool:
        with self._lock:
            return self._subs.pop(subscription_id, None) is not None

    @property
    def subscriptions(self) -> list[MlSubscription]:
        return list(self._subs.values())
