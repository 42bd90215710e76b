"""Wire-level data model for UPF event exposure and NWDAF analytics messages.

Every value here is immutable and validated on construction, so a message
object that exists is a message that can be encoded.
"""

from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import NamedTuple, Optional


class CodecError(ValueError):
    """Base class for everything the codec raises."""


class MalformedJson(CodecError):
    pass


class SchemaViolation(CodecError):
    def __init__(self, field: str, reason: str = "") -> None:
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}" if reason else field)


class UnknownEnumToken(SchemaViolation):
    def __init__(self, field: str, token: object) -> None:
        self.token = token
        super().__init__(field, f"unknown token {token!r}")


class InvariantViolation(CodecError):
    """A value object was built with inconsistent fields (caller bug)."""


class EventType(str, Enum):
    USER_DATA_USAGE_MEASURES = "USER_DATA_USAGE_MEASURES"
    USER_DATA_USAGE_TRENDS = "USER_DATA_USAGE_TRENDS"


class MeasurementType(str, Enum):
    VOLUME_MEASUREMENT = "VOLUME_MEASUREMENT"
    THROUGHPUT_MEASUREMENT = "THROUGHPUT_MEASUREMENT"


class Granularity(str, Enum):
    PER_FLOW = "PER_FLOW"
    PER_SESSION = "PER_SESSION"


class FlowDirection(str, Enum):
    UPLINK = "UPLINK"
    DOWNLINK = "DOWNLINK"
    BIDIRECTIONAL = "BIDIRECTIONAL"


class AnalyticsEventId(str, Enum):
    ABNORMAL_BEHAVIOUR = "ABNORMAL_BEHAVIOUR"


class ExceptionId(str, Enum):
    SUSPICION_OF_DDOS_ATTACK = "SUSPICION_OF_DDOS_ATTACK"
    TOO_FREQUENT_SERVICE_ACCESS = "TOO_FREQUENT_SERVICE_ACCESS"
    UNEXPECTED_UE_LOCATION = "UNEXPECTED_UE_LOCATION"
    UNEXPECTED_RADIO_LINK_FAILURES = "UNEXPECTED_RADIO_LINK_FAILURES"


def is_ipv4(value: object) -> bool:
    if not isinstance(value, str):
        return False
    try:
        return str(ipaddress.IPv4Address(value)) == value
    except ValueError:
        return False


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise InvariantViolation(msg)


def _is_count(v: object) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0


def _is_rate(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0 and v == v and v != float("inf")


def _is_utc(ts: object) -> bool:
    return isinstance(ts, datetime) and ts.tzinfo is not None and ts.utcoffset().total_seconds() == 0


_SD_RE = re.compile(r"[0-9a-fA-F]{5,6}")


@dataclass(frozen=True)
class Snssai:
    sst: int
    sd: Optional[str] = None

    def __post_init__(self) -> None:
        _require(isinstance(self.sst, int) and not isinstance(self.sst, bool) and 0 <= self.sst <= 255,
                 f"sst out of range: {self.sst!r}")
        if self.sd is not None:
            _require(isinstance(self.sd, str) and _SD_RE.fullmatch(self.sd) is not None, f"bad sd: {self.sd!r}")
            # 5-digit SDs are widened; the stored form is always 6 digits
            object.__setattr__(self, "sd", self.sd.zfill(6))


class FlowKey(NamedTuple):
    """IPv4 4-tuple plus the direction the flow is reported in."""

    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    direction: FlowDirection = FlowDirection.BIDIRECTIONAL

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.direction)

    def normalized(self, ue_ip: Optional[str] = None) -> "FlowKey":
        """Canonical key for the flow.

        With a UE address the UE side is placed first; otherwise the smaller
        (ip, port) endpoint goes first.  Only BIDIRECTIONAL keys are folded.
        """
        if self.direction is not FlowDirection.BIDIRECTIONAL:
            return self
        if ue_ip is not None:
            if self.src_ip == ue_ip:
                return self
            if self.dst_ip == ue_ip:
                return self.reversed()
        if (self.src_ip, self.src_port) <= (self.dst_ip, self.dst_port):
            return self
        return self.reversed()

    def validate(self) -> None:
        _require(is_ipv4(self.src_ip) and is_ipv4(self.dst_ip), f"bad flow addresses {self[:2]}")
        for port in (self.src_port, self.dst_port):
            _require(isinstance(port, int) and 0 <= port <= 65535, f"bad port {port!r}")
        _require(isinstance(self.direction, FlowDirection), "bad direction")


@dataclass(frozen=True)
class ReportingMode:
    period_seconds: int
    max_reports: Optional[int] = None
    expiry: Optional[datetime] = None

    def __post_init__(self) -> None:
        _require(isinstance(self.period_seconds, int) and not isinstance(self.period_seconds, bool)
                 and self.period_seconds >= 1, "periodSeconds must be >= 1")
        if self.max_reports is not None:
            _require(isinstance(self.max_reports, int) and not isinstance(self.max_reports, bool)
                     and self.max_reports >= 1, "maxReports must be >= 1")
        if self.expiry is not None:
            _require(_is_utc(self.expiry), "expiry must be a UTC datetime")


@dataclass(frozen=True)
class EventFilters:
    dnn: Optional[str] = None
    snssai: Optional[Snssai] = None
    ue_ipv4_addr: Optional[str] = None

    def __post_init__(self) -> None:
        if self.ue_ipv4_addr is not None:
            _require(is_ipv4(self.ue_ipv4_addr), f"bad ueIpv4Addr {self.ue_ipv4_addr!r}")
        if self.dnn is not None:
            _require(isinstance(self.dnn, str), "dnn must be a string")

    @property
    def empty(self) -> bool:
        return self.dnn is None and self.snssai is None and self.ue_ipv4_addr is None


@dataclass(frozen=True)
class EesSubscriptionRequest:
    event_types: frozenset
    measurement_types: frozenset
    granularity: Granularity
    reporting: ReportingMode
    notify_uri: str
    filters: Optional[EventFilters] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "event_types", frozenset(self.event_types))
        object.__setattr__(self, "measurement_types", frozenset(self.measurement_types))
        _require(len(self.event_types) > 0, "eventTypes must be non-empty")
        _require(all(isinstance(e, EventType) for e in self.event_types), "eventTypes")
        _require(all(isinstance(m, MeasurementType) for m in self.measurement_types), "measurementTypes")
        _require(isinstance(self.granularity, Granularity), "granularity")
        _require(is_http_uri(self.notify_uri), f"notifyUri must be an absolute http URI: {self.notify_uri!r}")


def is_http_uri(value: object) -> bool:
    return isinstance(value, str) and re.fullmatch(r"https?://[^\s/?#]+(/[^\s]*)?", value) is not None


@dataclass(frozen=True)
class EesSubscriptionResponse:
    subscription_id: str
    accepted: EesSubscriptionRequest


@dataclass(frozen=True)
class VolumeMeasurement:
    total_volume: int
    ul_volume: int
    dl_volume: int
    total_nb_of_packets: int
    ul_nb_of_packets: int
    dl_nb_of_packets: int

    def __post_init__(self) -> None:
        for name in ("total_volume", "ul_volume", "dl_volume",
                     "total_nb_of_packets", "ul_nb_of_packets", "dl_nb_of_packets"):
            _require(_is_count(getattr(self, name)), f"{name} must be a non-negative integer")
        _require(self.total_volume == self.ul_volume + self.dl_volume, "totalVolume != ulVolume + dlVolume")
        _require(self.total_nb_of_packets == self.ul_nb_of_packets + self.dl_nb_of_packets,
                 "totalNbOfPackets != ulNbOfPackets + dlNbOfPackets")

    @classmethod
    def of(cls, ul_volume: int, dl_volume: int, ul_packets: int, dl_packets: int) -> "VolumeMeasurement":
        return cls(ul_volume + dl_volume, ul_volume, dl_volume, ul_packets + dl_packets, ul_packets, dl_packets)


@dataclass(frozen=True)
class ThroughputMeasurement:
    ul_throughput: float
    dl_throughput: float

    def __post_init__(self) -> None:
        _require(_is_rate(self.ul_throughput) and _is_rate(self.dl_throughput), "throughput must be >= 0")


@dataclass(frozen=True)
class ThroughputStatisticsMeasurement:
    ul_average: float
    ul_peak: float
    dl_average: float
    dl_peak: float

    def __post_init__(self) -> None:
        for name in ("ul_average", "ul_peak", "dl_average", "dl_peak"):
            _require(_is_rate(getattr(self, name)), f"{name} must be >= 0")
        _require(self.ul_peak >= self.ul_average and self.dl_peak >= self.dl_average, "peak < average")


@dataclass(frozen=True)
class FlowInformation:
    pack_filt_id: str
    f_dir: FlowDirection = FlowDirection.BIDIRECTIONAL

    def __post_init__(self) -> None:
        _require(isinstance(self.pack_filt_id, str), "packFiltId must be a string")
        _require(isinstance(self.f_dir, FlowDirection), "fDir")


@dataclass(frozen=True)
class UsageMeasurementItem:
    flow_info: Optional[FlowInformation] = None
    volume: Optional[VolumeMeasurement] = None
    throughput: Optional[ThroughputMeasurement] = None
    throughput_statistics: Optional[ThroughputStatisticsMeasurement] = None

    def __post_init__(self) -> None:
        _require(self.volume is not None or self.throughput is not None
                 or self.throughput_statistics is not None, "item carries no measurement")


@dataclass(frozen=True)
class EesNotification:
    event_type: EventType
    ue_ipv4_addr: str
    snssai: Snssai
    time_stamp: datetime
    start_time: datetime
    items: tuple = ()
    subscription_id: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        _require(isinstance(self.event_type, EventType), "eventType")
        _require(is_ipv4(self.ue_ipv4_addr), f"bad ueIpv4Addr {self.ue_ipv4_addr!r}")
        _require(_is_utc(self.time_stamp) and _is_utc(self.start_time), "timestamps must be UTC")
        _require(self.start_time <= self.time_stamp, "startTime after timeStamp")
        _require(all(isinstance(i, UsageMeasurementItem) for i in self.items), "items")


@dataclass(frozen=True)
class AnalyticsSubscription:
    event_id: AnalyticsEventId
    notify_uri: str
    period_seconds: int
    exception_ids: Optional[frozenset] = None
    subscription_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.exception_ids is not None:
            object.__setattr__(self, "exception_ids", frozenset(self.exception_ids))
            _require(all(isinstance(e, ExceptionId) for e in self.exception_ids), "exceptionIds")
        _require(isinstance(self.event_id, AnalyticsEventId), "eventId")
        _require(is_http_uri(self.notify_uri), "notifyUri must be an absolute http URI")
        _require(isinstance(self.period_seconds, int) and not isinstance(self.period_seconds, bool)
                 and self.period_seconds >= 1, "periodSeconds must be >= 1")


@dataclass(frozen=True)
class ExceptionReport:
    excep_id: ExceptionId
    ue_ipv4_addrs: tuple
    pdu_session_ids: tuple = ()
    confidences: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "ue_ipv4_addrs", tuple(self.ue_ipv4_addrs))
        object.__setattr__(self, "pdu_session_ids", tuple(self.pdu_session_ids))
        object.__setattr__(self, "confidences", tuple(self.confidences))
        _require(isinstance(self.excep_id, ExceptionId), "excepId")
        _require(all(is_ipv4(a) for a in self.ue_ipv4_addrs), "ueIpv4Addrs")
        _require(len(self.confidences) == len(self.ue_ipv4_addrs), "one confidence per listed UE")
        _require(all(isinstance(c, (int, float)) and not isinstance(c, bool) and 0 <= c <= 1
                     for c in self.confidences), "confidence must lie in [0, 1]")
        _require(all(isinstance(s, int) and not isinstance(s, bool) for s in self.pdu_session_ids),
                 "pduSessionIds")


@dataclass(frozen=True)
class AbnormalBehaviourNotification:
    subscription_id: str
    time_stamp: datetime
    exceptions: tuple = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "exceptions", tuple(self.exceptions))
        _require(isinstance(self.subscription_id, str), "subscriptionId")
        _require(_is_utc(self.time_stamp), "timeStamp must be UTC")
        _require(all(isinstance(e, ExceptionReport) for e in self.exceptions), "exceptions")

    def flagged_ues(self) -> list:
        out = []
        for exc in self.exceptions:
            for ue in exc.ue_ipv4_addrs:
                if ue not in out:
                    out.append(ue)
        return out


def utc_now() -> datetime:
    return datetime.now(timezone.utc)
