"""Per-flow aggregate records and the deferred measurement computation.

Ingestion only bumps counters; everything reported (volumes, throughput,
per-second statistics) is derived here when a report is generated.
"""

from __future__ import annotations

import json
from typing import Iterable, Optional, Sequence

from ..ees.model import (
    FlowDirection,
    FlowInformation,
    FlowKey,
    Granularity,
    MeasurementType,
    ThroughputMeasurement,
    ThroughputStatisticsMeasurement,
    UsageMeasurementItem,
    VolumeMeasurement,
)

FlowTuple = tuple  # (ue_ip, remote_ip, ue_port, remote_port)


class AggregateRecord:
    """Running counters for one (subscription, session, flow) key."""

    __slots__ = ("ul_bytes", "dl_bytes", "ul_packets", "dl_packets",
                 "b_sec", "b_ul", "b_dl", "first_seen", "last_seen")

    def __init__(self, ring_size: int = 4) -> None:
        self.ul_bytes = 0
        self.dl_bytes = 0
        self.ul_packets = 0
        self.dl_packets = 0
        self.b_sec = [-1] * ring_size
        self.b_ul = [0] * ring_size
        self.b_dl = [0] * ring_size
        self.first_seen = 0
        self.last_seen = 0

    def add(self, sec: int, uplink: bool, size: int, now_ns: int = 0) -> None:
        slot = sec % len(self.b_sec)
        if self.b_sec[slot] != sec:
            self.b_sec[slot] = sec
            self.b_ul[slot] = 0
            self.b_dl[slot] = 0
        if uplink:
            self.ul_bytes += size
            self.ul_packets += 1
            self.b_ul[slot] += size
        else:
            self.dl_bytes += size
            self.dl_packets += 1
            self.b_dl[slot] += size
        if not self.first_seen:
            self.first_seen = now_ns
        self.last_seen = now_ns

    def per_second(self) -> dict:
        """Second index (relative to window start) -> (ul_bytes, dl_bytes)."""
        return {s: (u, d) for s, u, d in zip(self.b_sec, self.b_ul, self.b_dl) if s >= 0}

    @classmethod
    def from_buckets(cls, buckets: dict, ul_packets: int = 0, dl_packets: int = 0) -> "AggregateRecord":
        rec = cls(max(1, max(buckets, default=0) + 1))
        for sec, (u, d) in sorted(buckets.items()):
            rec.b_sec[sec] = sec
            rec.b_ul[sec] = u
            rec.b_dl[sec] = d
            rec.ul_bytes += u
            rec.dl_bytes += d
        rec.ul_packets = ul_packets
        rec.dl_packets = dl_packets
        return rec


def merge_records(records: Iterable[AggregateRecord]) -> AggregateRecord:
    """Field-wise sum of records (used for PER_SESSION granularity)."""
    records = list(records)
    buckets: dict = {}
    for r in records:
        for s, (u, d) in r.per_second().items():
            pu, pd = buckets.get(s, (0, 0))
            buckets[s] = (pu + u, pd + d)
    out = AggregateRecord(max(1, max(buckets, default=0) + 1))
    for s, (u, d) in buckets.items():
        out.b_sec[s], out.b_ul[s], out.b_dl[s] = s, u, d
    out.ul_bytes = sum(r.ul_bytes for r in records)
    out.dl_bytes = sum(r.dl_bytes for r in records)
    out.ul_packets = sum(r.ul_packets for r in records)
    out.dl_packets = sum(r.dl_packets for r in records)
    seen = [r.first_seen for r in records if r.first_seen]
    out.first_seen = min(seen, default=0)
    out.last_seen = max((r.last_seen for r in records), default=0)
    return out


def pack_filt_id(flow: Sequence) -> str:
    """Stringified flow description carried in ``flowInfo.packFiltId``."""
    return json.dumps({"SrcIp": flow[0], "DstIp": flow[1], "SrcPort": flow[2], "DstPort": flow[3]})


def parse_pack_filt_id(text: str) -> FlowKey:
    d = json.loads(text)
    return FlowKey(d["SrcIp"], d["DstIp"], int(d.get("SrcPort", 0)), int(d.get("DstPort", 0)))


def second_samples(rec: AggregateRecord, window_s: float) -> tuple[list, list]:
    """Per-second (ul, dl) byte samples covering the whole window, zeros included."""
    buckets = rec.per_second()
    n = max(1, int(round(window_s)), max(buckets, default=-1) + 1)
    ul = [0] * n
    dl = [0] * n
    for s, (u, d) in buckets.items():
        ul[s] += u
        dl[s] += d
    return ul, dl


def statistics_from_samples(ul: Sequence[float], dl: Sequence[float]) -> ThroughputStatisticsMeasurement:
    ul_avg = sum(ul) / len(ul) if ul else 0.0
    dl_avg = sum(dl) / len(dl) if dl else 0.0
    return ThroughputStatisticsMeasurement(
        ul_average=float(ul_avg),
        ul_peak=float(max(max(ul, default=0), ul_avg)),
        dl_average=float(dl_avg),
        dl_peak=float(max(max(dl, default=0), dl_avg)),
    )


def compute_measurements(
    rec: AggregateRecord,
    window: float,
    granularity: Granularity,
    requested: Iterable[MeasurementType],
    flow: Optional[Sequence] = None,
) -> UsageMeasurementItem:
    """Turn one record's counters into a usage measurement item.

    ``window`` is the report window in seconds. Volume comes from the
    counters, throughput is bytes / window, and the statistics are the mean
    and peak of the per-second samples. THROUGHPUT_MEASUREMENT carries both
    throughput bodies.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    requested = set(requested)
    volume = throughput = stats = None
    if MeasurementType.VOLUME_MEASUREMENT in requested:
        volume = VolumeMeasurement.of(rec.ul_bytes, rec.dl_bytes, rec.ul_packets, rec.dl_packets)
    if MeasurementType.THROUGHPUT_MEASUREMENT in requested:
        throughput = ThroughputMeasurement(rec.ul_bytes / window, rec.dl_bytes / window)
        stats = statistics_from_samples(*second_samples(rec, window))
    flow_info = None
    if granularity is Granularity.PER_FLOW:
        if flow is None:
            raise ValueError("PER_FLOW items need the flow key")
        flow_info = FlowInformation(pack_filt_id(flow), FlowDirection.BIDIRECTIONAL)
    return UsageMeasurementItem(flow_info, volume, throughput, stats)


def trend_item(
    history: Sequence[tuple[list, list]],
    granularity: Granularity,
    flow: Optional[Sequence] = None,
) -> UsageMeasurementItem:
    """USER_DATA_USAGE_TRENDS item: statistics over the concatenated samples of recent windows."""
    ul = [x for h in history for x in h[0]]
    dl = [x for h in history for x in h[1]]
    flow_info = None
    if granularity is Granularity.PER_FLOW:
        flow_info = FlowInformation(pack_filt_id(flow), FlowDirection.BIDIRECTIONAL)
    return UsageMeasurementItem(flow_info, throughput_statistics=statistics_from_samples(ul, dl))
