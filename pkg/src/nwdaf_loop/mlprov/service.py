"""HTTP surface of the model provisioning service."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from ..ees.model import AnalyticsEventId, SchemaViolation
from ..net import EventLog, HttpError, JsonServer, load_config, post
from .forest import ANOMALOUS, FeatureWidthMismatch, ForestModel
from .registry import MlSubscription, Registry, UnknownModel

SUBS = "/nnwdaf-mlmodelprovision/v1/subscriptions"
LABELS = {0: "BENIGN", 1: "ANOMALOUS"}


def _post_json(uri: str, payload: dict) -> None:
    status, body = post(uri, payload, timeout=1.0)
    if status >= 300:
        raise HttpError(status, body.decode(errors="replace"))


class MlProvisionService:
    def __init__(self, registry_dir: Optional[str | Path] = None, *, listen_addr: str = "127.0.0.1", port: int = 0,
                 events: Optional[EventLog] = None) -> None:
        self.http = JsonServer(listen_addr, port, name="mlprov")
        self.events = events
        self.registry = Registry(registry_dir, notify=self._notify,
                                 inference_url=lambda d: f"{self.http.base_uri}/models/{d.name}/{d.version}:infer")
        self.infer_calls = 0
        self._routes()

    def _notify(self, uri: str, payload: dict) -> None:
        _post_json(uri, payload)
        if self.events is not None:
            self.events.emit("mlprov_notified", uri=uri, model=payload["model"]["name"],
                             version=payload["model"]["version"])

    def _routes(self) -> None:
        http, reg = self.http, self.registry

        @http.route("POST", SUBS)
        def subscribe(m, body, q):
            try:
                s = MlSubscription.from_dict(json.loads(body or b"null"))
            except ValueError as exc:
                raise HttpError(400, str(exc))
            sid, current = reg.subscribe_models(s, notify_now=False)
            return 201, {"subscriptionId": sid, "current": current}

        @http.route("DELETE", SUBS + r"/(?P<sid>[^/]+)")
        def unsubscribe(m, body, q):
            if not reg.unsubscribe(m["sid"]):
                raise HttpError(404, "unknown subscription")
            return 204, None

        @http.route("POST", r"/admin/models")
        def register(m, body, q):
            try:
                desc = reg.register_model(ForestModel.loads(body))
            except SchemaViolation as exc:
                raise HttpError(400, str(exc))
            if self.events is not None:
                self.events.emit("mlprov_registered", model=desc.name, version=desc.version)
            return 201, desc.to_dict()

        @http.route("GET", r"/models")
        def query(m, body, q):
            filters = dict(q)
            try:
                event_id = AnalyticsEventId(filters.pop("event-id", "ABNORMAL_BEHAVIOUR"))
            except ValueError as exc:
                raise HttpError(400, str(exc))
            return [d.to_dict() for d in reg.query_models(event_id, filters)]

        @http.route("POST", r"/models/(?P<name>[^/]+)/(?P<version>\d+):infer")
        def infer(m, body, q):
            try:
                model = reg.get(m["name"], int(m["version"]))
            except UnknownModel as exc:
                raise HttpError(404, f"unknown model {exc}")
            doc = json.loads(body or b"{}")
            try:
                preds = model.infer(doc.get("features") or [])
            except FeatureWidthMismatch as exc:
                raise HttpError(422, str(exc))
            self.infer_calls += 1
            d = model.descriptor
            return {"model": d.name, "version": d.version,
                    "predictions": [{"label": LABELS[lab], "anomalous": lab == ANOMALOUS, "voteShare": share}
                                    for lab, share in preds]}

    @property
    def base_uri(self) -> str:
        return self.http.base_uri

    def start(self) -> "MlProvisionService":
        self.http.start()
        return self

    def stop(self) -> None:
        self.http.stop()


def from_config(path: str | Path, events: Optional[EventLog] = None) -> MlProvisionService:
    """``mlprov.toml``: registry_dir, listen_addr ("host:port" or host)."""
    cfg = load_config(path)
    host, _, port = str(cfg.get("listen_addr", "127.0.0.1:0")).partition(":")
    return MlProvisionService(cfg.get("registry_dir"), listen_addr=host, port=int(port or 0), events=events)
