"""Abnormal-UE detection over a window of stored usage reports."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence

from ..ees.model import ExceptionId
from ..net import Unreachable, post
from .graph import FEATURE_SCHEMA, CommGraph, build_comm_graph, extract_features

DEFAULT_THRESHOLD = 0.5


class Label(str, Enum):
    BENIGN = "BENIGN"
    ANOMALOUS = "ANOMALOUS"


class NoModelAvailable(RuntimeError):
    pass


class InferenceUnreachable(ConnectionError):
    pass


@dataclass(frozen=True)
class DetectionResult:
    ue_ipv4_addr: str
    label: Label
    confidence: float
    excep_id: ExceptionId
    window_used: tuple[float, float]


class Detections(list):
    """List of DetectionResult plus metadata about the inference call."""

    def __init__(self, items=(), *, error: Optional[str] = None, model: Optional[str] = None,
                 model_version: Optional[int] = None, inference_s: float = 0.0, graph: Optional[CommGraph] = None):
        super().__init__(items)
        self.error = error
        self.model = model
        self.model_version = model_version
        self.inference_s = inference_s
        self.graph = graph


class ReportSource(Protocol):
    def query_reports(self, start: float, end: float, ue: Optional[str] = None) -> list: ...


def http_infer(uri: str, rows: Sequence[Sequence[float]], timeout: float = 2.0) -> dict:
    try:
        status, body = post(uri, {"featureSchema": list(FEATURE_SCHEMA), "features": [list(r) for r in rows]},
                            timeout=timeout)
    except Unreachable as exc:
        raise InferenceUnreachable(str(exc)) from None
    if status != 200:
        raise InferenceUnreachable(f"inference endpoint answered {status}: {body[:200]!r}")
    return json.loads(body)


def analyze_window(
    window: tuple[float, float],
    inference_uri: Optional[str],
    source: ReportSource,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    infer=http_infer,
) -> Detections:
    """Classify every UE seen in the window. ``window`` is (start, end) in epoch seconds."""
    if not inference_uri:
        raise NoModelAvailable("no inference endpoint provisioned")
    reports = source.query_reports(*window)
    g = build_comm_graph(reports)
    feats = extract_features(g, sorted(g.ues))
    if not feats:
        return Detections(graph=g)
    ues = list(feats)
    t0 = time.perf_counter()
    try:
        resp = infer(inference_uri, [feats[u].vector() for u in ues])
    except InferenceUnreachable as exc:
        return Detections(error=str(exc), graph=g)
    elapsed = time.perf_counter() - t0
    out = []
    for ue, pred in zip(ues, resp["predictions"]):
        share = float(pred["voteShare"])
        label = Label.ANOMALOUS if share >= threshold else Label.BENIGN
        out.append(DetectionResult(ue, label, share, ExceptionId.SUSPICION_OF_DDOS_ATTACK, tuple(window)))
    return Detections(out, model=resp.get("model"), model_version=resp.get("version"), inference_s=elapsed, graph=g)
