"""Packet descriptors and PDU sessions handled by the simulated UPF."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

from ..ees.model import FlowDirection, FlowKey, Snssai, is_ipv4

UPLINK = FlowDirection.UPLINK
DOWNLINK = FlowDirection.DOWNLINK


class PacketKind(str, Enum):
    DATA = "DATA"
    PROBE = "PROBE"


class ForwardDecision(str, Enum):
    FORWARDED = "FORWARDED"
    DROPPED_RELEASED = "DROPPED_RELEASED"
    DROPPED_NO_SESSION = "DROPPED_NO_SESSION"


class SessionState(str, Enum):
    ACTIVE = "ACTIVE"
    RELEASED = "RELEASED"


class MalformedDescriptor(ValueError):
    pass


@dataclass(slots=True)
class PacketDescriptor:
    flow: FlowKey
    pdu_session_id: int
    ue_ipv4_addr: str
    size_bytes: int
    direction: FlowDirection = UPLINK
    kind: PacketKind = PacketKind.DATA
    timestamp: int = 0  # monotonic ns at creation

    def validate(self) -> None:
        if not isinstance(self.size_bytes, int) or self.size_bytes < 1:
            raise MalformedDescriptor(f"sizeBytes must be >= 1, got {self.size_bytes!r}")
        if self.direction not in (UPLINK, DOWNLINK):
            raise MalformedDescriptor(f"direction must be UPLINK or DOWNLINK, got {self.direction!r}")
        if not is_ipv4(self.ue_ipv4_addr):
            raise MalformedDescriptor(f"bad ueIpv4Addr {self.ue_ipv4_addr!r}")
        try:
            self.flow.validate()
        except ValueError as exc:
            raise MalformedDescriptor(str(exc)) from None
        if self.direction is UPLINK and self.flow.src_ip != self.ue_ipv4_addr:
            raise MalformedDescriptor("uplink packet must originate from the UE address")
        if self.direction is DOWNLINK and self.flow.dst_ip != self.ue_ipv4_addr:
            raise MalformedDescriptor("downlink packet must be addressed to the UE")

    def to_dict(self) -> dict:
        f = self.flow
        return {
            "flow": {"srcIp": f.src_ip, "dstIp": f.dst_ip, "srcPort": f.src_port, "dstPort": f.dst_port},
            "pduSessionId": self.pdu_session_id,
            "ueIpv4Addr": self.ue_ipv4_addr,
            "sizeBytes": self.size_bytes,
            "direction": self.direction.value,
            "kind": self.kind.value,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: Any) -> "PacketDescriptor":
        """Decode and validate one wire descriptor (ingestion boundary)."""
        try:
            f = d["flow"]
            p = cls(
                flow=FlowKey(f["srcIp"], f["dstIp"], int(f["srcPort"]), int(f["dstPort"]), FlowDirection.BIDIRECTIONAL),
                pdu_session_id=int(d["pduSessionId"]),
                ue_ipv4_addr=d["ueIpv4Addr"],
                size_bytes=d["sizeBytes"],
                direction=FlowDirection(d.get("direction", "UPLINK")),
                kind=PacketKind(d.get("kind", "DATA")),
                timestamp=int(d.get("timestamp", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedDescriptor(f"bad descriptor: {exc!r}") from None
        p.validate()
        return p


@dataclass
class PduSession:
    pdu_session_id: int
    ue_ipv4_addr: str
    snssai: Snssai
    dnn: str = "internet"
    state: SessionState = SessionState.ACTIVE
    released_at: Optional[float] = None  # wall clock
    forwarded_packets: int = 0
    forwarded_bytes: int = 0
    dropped_packets: int = 0

    @property
    def active(self) -> bool:
        return self.state is SessionState.ACTIVE
