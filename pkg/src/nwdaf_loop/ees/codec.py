"""Strict JSON encoder/decoder for the event exposure and analytics messages.

Decoding tolerates unknown object members but rejects unknown enumeration
tokens. Every decoded message satisfies the invariants of its model type;
violations surface as :class:`SchemaViolation` naming the offending field.
"""

from __future__ import annotations

import json
import re
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Type, TypeVar

from .model import (
    AbnormalBehaviourNotification,
    AnalyticsEventId,
    AnalyticsSubscription,
    EesNotification,
    EesSubscriptionRequest,
    EesSubscriptionResponse,
    EventFilters,
    EventType,
    ExceptionId,
    ExceptionReport,
    FlowDirection,
    FlowInformation,
    Granularity,
    InvariantViolation,
    MalformedJson,
    MeasurementType,
    ReportingMode,
    SchemaViolation,
    Snssai,
    ThroughputMeasurement,
    ThroughputStatisticsMeasurement,
    UnknownEnumToken,
    UsageMeasurementItem,
    VolumeMeasurement,
    is_ipv4,
)

E = TypeVar("E", bound=Enum)

_MISSING = object()
_TS_RE = re.compile(
    r"(\d{4})-(\d{2})-(\d{2})[Tt](\d{2}):(\d{2}):(\d{2})(?:\.(\d{1,9}))?(Z|z|[+-]\d{2}:\d{2})"
)


# -- timestamps ------------------------------------------------------------

def format_timestamp(ts: datetime) -> str:
    """RFC 3339 UTC with a ``Z`` suffix; fractional seconds only when non-zero."""
    ts = ts.astimezone(timezone.utc)
    base = f"{ts.year:04d}-{ts.month:02d}-{ts.day:02d}T{ts.hour:02d}:{ts.minute:02d}:{ts.second:02d}"
    if ts.microsecond:
        base += "." + f"{ts.microsecond:06d}".rstrip("0")
    return base + "Z"


def parse_timestamp(text: str, field: str = "timestamp") -> datetime:
    if not isinstance(text, str):
        raise SchemaViolation(field, "expected an RFC 3339 string")
    m = _TS_RE.fullmatch(text)
    if m is None:
        raise SchemaViolation(field, f"not an RFC 3339 timestamp: {text!r}")
    frac = (m.group(7) or "").ljust(6, "0")[:6]
    try:
        iso = f"{m.group(1)}-{m.group(2)}-{m.group(3)}T{m.group(4)}:{m.group(5)}:{m.group(6)}"
        tz = m.group(8).upper()
        ts = datetime.fromisoformat(iso + ("+00:00" if tz == "Z" else tz))
    except ValueError as exc:
        raise SchemaViolation(field, str(exc)) from None
    return ts.replace(microsecond=int(frac)).astimezone(timezone.utc)


# -- decoding helpers ------------------------------------------------------

def _loads(raw: bytes | str) -> Any:
    if isinstance(raw, (bytes, bytearray, memoryview)):
        try:
            raw = bytes(raw).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not UTF-8: {exc}") from None
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedJson(str(exc)) from None


def _dumps(obj: Any) -> bytes:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _obj(value: Any, field: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaViolation(field, "expected an object")
    return value


def _get(d: dict, key: str, path: str, kind: Any = None, required: bool = True) -> Any:
    value = d.get(key, _MISSING)
    field = f"{path}.{key}" if path else key
    if value is _MISSING or value is None:
        if required:
            raise SchemaViolation(field, "missing")
        return None
    if kind is int and (not isinstance(value, int) or isinstance(value, bool)):
        raise SchemaViolation(field, "expected an integer")
    if kind is float and (not isinstance(value, (int, float)) or isinstance(value, bool)):
        raise SchemaViolation(field, "expected a number")
    if kind is str and not isinstance(value, str):
        raise SchemaViolation(field, "expected a string")
    if kind is list and not isinstance(value, list):
        raise SchemaViolation(field, "expected an array")
    if kind is dict and not isinstance(value, dict):
        raise SchemaViolation(field, "expected an object")
    return value


def _enum(cls: Type[E], token: Any, field: str) -> E:
    if not isinstance(token, str):
        raise SchemaViolation(field, "expected an enumeration token")
    try:
        return cls(token)
    except ValueError:
        raise UnknownEnumToken(field, token) from None


def _build(field: str, ctor: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
    try:
        return ctor(*args, **kwargs)
    except InvariantViolation as exc:
        raise SchemaViolation(field, str(exc)) from None


# -- shared pieces ---------------------------------------------------------

def _enc_snssai(s: Snssai) -> dict:
    out: dict = {"sst": s.sst}
    if s.sd is not None:
        out["sd"] = s.sd
    return out


def _dec_snssai(value: Any, field: str) -> Snssai:
    d = _obj(value, field)
    return _build(field, Snssai, _get(d, "sst", field, int), _get(d, "sd", field, str, required=False))


def _enc_filters(f: EventFilters) -> dict:
    out: dict = {}
    if f.dnn is not None:
        out["dnn"] = f.dnn
    if f.snssai is not None:
        out["snssai"] = _enc_snssai(f.snssai)
    if f.ue_ipv4_addr is not None:
        out["ueIpv4Addr"] = f.ue_ipv4_addr
    return out


def _dec_filters(value: Any, field: str) -> EventFilters:
    d = _obj(value, field)
    snssai = d.get("snssai")
    return _build(
        field,
        EventFilters,
        dnn=_get(d, "dnn", field, str, required=False),
        snssai=_dec_snssai(snssai, f"{field}.snssai") if snssai is not None else None,
        ue_ipv4_addr=_get(d, "ueIpv4Addr", field, str, required=False),
    )


# -- subscription request / response ---------------------------------------

def request_to_dict(req: EesSubscriptionRequest) -> dict:
    rep: dict = {"periodSeconds": req.reporting.period_seconds}
    if req.reporting.max_reports is not None:
        rep["maxReports"] = req.reporting.max_reports
    if req.reporting.expiry is not None:
        rep["expiry"] = format_timestamp(req.reporting.expiry)
    out: dict = {
        "eventTypes": sorted(e.value for e in req.event_types),
        "measurementTypes": sorted(m.value for m in req.measurement_types),
        "granularity": req.granularity.value,
        "reporting": rep,
        "notifyUri": req.notify_uri,
    }
    if req.filters is not None:
        out["filters"] = _enc_filters(req.filters)
    return out


def request_from_dict(d: Any, path: str = "") -> EesSubscriptionRequest:
    d = _obj(d, path or "request")
    p = (path + ".") if path else ""
    events = _get(d, "eventTypes", path, list)
    if not events:
        raise SchemaViolation(p + "eventTypes", "must be non-empty")
    event_types = frozenset(_enum(EventType, t, p + "eventTypes") for t in events)
    meas = _get(d, "measurementTypes", path, list, required=False) or []
    measurement_types = frozenset(_enum(MeasurementType, t, p + "measurementTypes") for t in meas)
    granularity = _enum(Granularity, _get(d, "granularity", path), p + "granularity")
    rep_d = _get(d, "reporting", path, dict)
    expiry = _get(rep_d, "expiry", p + "reporting", str, required=False)
    reporting = _build(
        p + "reporting",
        ReportingMode,
        _get(rep_d, "periodSeconds", p + "reporting", int),
        _get(rep_d, "maxReports", p + "reporting", int, required=False),
        parse_timestamp(expiry, p + "reporting.expiry") if expiry is not None else None,
    )
    notify_uri = _get(d, "notifyUri", path, str)
    filters = d.get("filters")
    return _build(
        p + "notifyUri" if notify_uri else path,
        EesSubscriptionRequest,
        event_types,
        measurement_types,
        granularity,
        reporting,
        notify_uri,
        _dec_filters(filters, p + "filters") if filters is not None else None,
    )


def encode_subscription_request(req: EesSubscriptionRequest) -> bytes:
    return _dumps(request_to_dict(req))


def decode_subscription_request(raw: bytes | str) -> EesSubscriptionRequest:
    return request_from_dict(_loads(raw))


def encode_subscription_response(resp: EesSubscriptionResponse) -> bytes:
    return _dumps({"subscriptionId": resp.subscription_id, "accepted": request_to_dict(resp.accepted)})


def decode_subscription_response(raw: bytes | str) -> EesSubscriptionResponse:
    d = _obj(_loads(raw), "response")
    return EesSubscriptionResponse(
        _get(d, "subscriptionId", "", str), request_from_dict(_get(d, "accepted", "", dict), "accepted")
    )


# -- usage notifications ---------------------------------------------------

def _enc_item(item: UsageMeasurementItem) -> dict:
    out: dict = {}
    if item.flow_info is not None:
        out["flowInfo"] = {"packFiltId": item.flow_info.pack_filt_id, "fDir": item.flow_info.f_dir.value}
    if item.volume is not None:
        v = item.volume
        out["volumeMeasurement"] = {
            "totalVolume": v.total_volume,
            "ulVolume": v.ul_volume,
            "dlVolume": v.dl_volume,
            "totalNbOfPackets": v.total_nb_of_packets,
            "ulNbOfPackets": v.ul_nb_of_packets,
            "dlNbOfPackets": v.dl_nb_of_packets,
        }
    if item.throughput is not None:
        out["throughputMeasurement"] = {
            "ulThroughput": item.throughput.ul_throughput,
            "dlThroughput": item.throughput.dl_throughput,
        }
    if item.throughput_statistics is not None:
        s = item.throughput_statistics
        out["throughputStatisticsMeasurement"] = {
            "ulAverage": s.ul_average,
            "ulPeak": s.ul_peak,
            "dlAverage": s.dl_average,
            "dlPeak": s.dl_peak,
        }
    return out


def _dec_item(value: Any, field: str) -> UsageMeasurementItem:
    d = _obj(value, field)
    flow_info = None
    if d.get("flowInfo") is not None:
        fp = f"{field}.flowInfo"
        fi = _obj(d["flowInfo"], fp)
        f_dir = fi.get("fDir", FlowDirection.BIDIRECTIONAL.value)
        flow_info = _build(fp, FlowInformation, _get(fi, "packFiltId", fp, str), _enum(FlowDirection, f_dir, fp + ".fDir"))
    volume = throughput = stats = None
    if d.get("volumeMeasurement") is not None:
        vp = f"{field}.volumeMeasurement"
        v = _obj(d["volumeMeasurement"], vp)
        volume = _build(
            vp,
            VolumeMeasurement,
            *(_get(v, k, vp, int) for k in ("totalVolume", "ulVolume", "dlVolume",
                                            "totalNbOfPackets", "ulNbOfPackets", "dlNbOfPackets")),
        )
    if d.get("throughputMeasurement") is not None:
        tp = f"{field}.throughputMeasurement"
        t = _obj(d["throughputMeasurement"], tp)
        throughput = _build(tp, ThroughputMeasurement, _get(t, "ulThroughput", tp, float), _get(t, "dlThroughput", tp, float))
    if d.get("throughputStatisticsMeasurement") is not None:
        sp = f"{field}.throughputStatisticsMeasurement"
        s = _obj(d["throughputStatisticsMeasurement"], sp)
        stats = _build(sp, ThroughputStatisticsMeasurement,
                       *(_get(s, k, sp, float) for k in ("ulAverage", "ulPeak", "dlAverage", "dlPeak")))
    return _build(field, UsageMeasurementItem, flow_info, volume, throughput, stats)


def notification_to_dict(n: EesNotification) -> dict:
    if not isinstance(n, EesNotification):
        raise InvariantViolation(f"not an EesNotification: {type(n).__name__}")
    out: dict = {}
    if n.subscription_id is not None:
        out["subscriptionId"] = n.subscription_id
    out.update({
        "eventType": n.event_type.value,
        "ueIpv4Addr": n.ue_ipv4_addr,
        "snssai": _enc_snssai(n.snssai),
        "timeStamp": format_timestamp(n.time_stamp),
        "startTime": format_timestamp(n.start_time),
        "userDataUsageMeasurements": [_enc_item(i) for i in n.items],
    })
    return out


def notification_from_dict(d: Any) -> EesNotification:
    d = _obj(d, "notification")
    items = _get(d, "userDataUsageMeasurements", "", list, required=False) or []
    time_stamp = parse_timestamp(_get(d, "timeStamp", ""), "timeStamp")
    start_time = parse_timestamp(_get(d, "startTime", ""), "startTime")
    if start_time > time_stamp:
        raise SchemaViolation("timeStamp", "earlier than startTime")
    return _build(
        "notification",
        EesNotification,
        event_type=_enum(EventType, _get(d, "eventType", ""), "eventType"),
        ue_ipv4_addr=_ipv4(_get(d, "ueIpv4Addr", "", str), "ueIpv4Addr"),
        snssai=_dec_snssai(_get(d, "snssai", ""), "snssai"),
        time_stamp=time_stamp,
        start_time=start_time,
        items=[_dec_item(v, f"userDataUsageMeasurements[{k}]") for k, v in enumerate(items)],
        subscription_id=_get(d, "subscriptionId", "", str, required=False),
    )


def _ipv4(value: str, field: str) -> str:
    if not is_ipv4(value):
        raise SchemaViolation(field, f"not a dotted-quad IPv4 address: {value!r}")
    return value


def encode_notification(n: EesNotification) -> bytes:
    return _dumps(notification_to_dict(n))


def decode_notification(raw: bytes | str) -> EesNotification:
    return notification_from_dict(_loads(raw))


# -- analytics subscription / abnormal behaviour ---------------------------

def analytics_subscription_to_dict(s: AnalyticsSubscription) -> dict:
    out: dict = {}
    if s.subscription_id is not None:
        out["subscriptionId"] = s.subscription_id
    out["eventId"] = s.event_id.value
    if s.exception_ids is not None:
        out["exceptionIds"] = sorted(e.value for e in s.exception_ids)
    out["notifyUri"] = s.notify_uri
    out["periodSeconds"] = s.period_seconds
    return out


def analytics_subscription_from_dict(d: Any) -> AnalyticsSubscription:
    d = _obj(d, "subscription")
    exc = _get(d, "exceptionIds", "", list, required=False)
    return _build(
        "subscription",
        AnalyticsSubscription,
        event_id=_enum(AnalyticsEventId, _get(d, "eventId", ""), "eventId"),
        notify_uri=_get(d, "notifyUri", "", str),
        period_seconds=_get(d, "periodSeconds", "", int),
        exception_ids=None if exc is None else frozenset(_enum(ExceptionId, t, "exceptionIds") for t in exc),
        subscription_id=_get(d, "subscriptionId", "", str, required=False),
    )


def encode_analytics_subscription(s: AnalyticsSubscription) -> bytes:
    return _dumps(analytics_subscription_to_dict(s))


def decode_analytics_subscription(raw: bytes | str) -> AnalyticsSubscription:
    return analytics_subscription_from_dict(_loads(raw))


def abnormal_to_dict(n: AbnormalBehaviourNotification) -> dict:
    return {
        "subscriptionId": n.subscription_id,
        "timeStamp": format_timestamp(n.time_stamp),
        "exceptions": [
            {
                "excepId": e.excep_id.value,
                "ueIpv4Addrs": list(e.ue_ipv4_addrs),
                "pduSessionIds": list(e.pdu_session_ids),
                "confidences": list(e.confidences),
            }
            for e in n.exceptions
        ],
    }


def abnormal_from_dict(d: Any) -> AbnormalBehaviourNotification:
    d = _obj(d, "notification")
    exceptions = []
    for k, e in enumerate(_get(d, "exceptions", "", list, required=False) or []):
        path = f"exceptions[{k}]"
        e = _obj(e, path)
        exceptions.append(_build(
            path,
            ExceptionReport,
            excep_id=_enum(ExceptionId, _get(e, "excepId", path), path + ".excepId"),
            ue_ipv4_addrs=_get(e, "ueIpv4Addrs", path, list),
            pdu_session_ids=_get(e, "pduSessionIds", path, list, required=False) or [],
            confidences=_get(e, "confidences", path, list),
        ))
    return _build(
        "notification",
        AbnormalBehaviourNotification,
        subscription_id=_get(d, "subscriptionId", "", str),
        time_stamp=parse_timestamp(_get(d, "timeStamp", ""), "timeStamp"),
        exceptions=exceptions,
    )


def encode_abnormal_notification(n: AbnormalBehaviourNotification) -> bytes:
    return _dumps(abnormal_to_dict(n))


def decode_abnormal_notification(raw: bytes | str) -> AbnormalBehaviourNotification:
    return abnormal_from_dict(_loads(raw))


def loads_object(raw: bytes | str, field: str = "body") -> dict:
    """Parse a JSON object body with codec error semantics."""
    return _obj(_loads(raw), field)


def dumps(obj: Any) -> bytes:
    return _dumps(obj)


__all__ = [
    "format_timestamp",
    "parse_timestamp",
    "encode_subscription_request",
    "decode_subscription_request",
    "encode_subscription_response",
    "decode_subscription_response",
    "encode_notification",
    "decode_notification",
    "encode_analytics_subscription",
    "decode_analytics_subscription",
    "encode_abnormal_notification",
    "decode_abnormal_notification",
    "request_to_dict",
    "request_from_dict",
    "notification_to_dict",
    "notification_from_dict",
    "analytics_subscription_to_dict",
    "analytics_subscription_from_dict",
    "abnormal_to_dict",
    "abnormal_from_dict",
    "loads_object",
    "dumps",
]
