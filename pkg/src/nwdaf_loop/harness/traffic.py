"""Seeded UE traffic generators producing timed packet descriptors."""

from __future__ import annotations

import heapq
import itertools
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

from ..ees.model import FlowKey
from ..upf.packets import DOWNLINK, UPLINK, PacketDescriptor, PacketKind


class Behavior(str, Enum):
    BENIGN_IPERF = "BENIGN_IPERF"
    BENIGN_WEB = "BENIGN_WEB"
    BOT_SCAN = "BOT_SCAN"


IPERF_PACKET = 1250
ACK_SIZE = 64
SCAN_SIZE = 60
SCAN_PORT = 8080
SCAN_STEP = 1e-4  # spacing of packets inside one scan exchange


@dataclass
class UeProfile:
    ue_ipv4_addr: str
    pdu_session_id: int
    behavior: Behavior
    rate_mbps: float = 2.0       # BENIGN_IPERF
    ack_every: int = 2           # BENIGN_IPERF: one downlink ack per this many uplink packets
    scan_gap_s: float = 0.05     # BOT_SCAN: gap between consecutive destinations
    scan_targets: int = 20       # BOT_SCAN: N distinct servers
    scan_ul_packets: int = 1     # BOT_SCAN: uplink packets per exchange
    web_servers: int = 3         # BENIGN_WEB: at most this many servers
    web_think_s: float = 2.0     # BENIGN_WEB: mean gap between page loads
    start_s: float = 0.0         # offset of the first packet
    seed: int = 0

    def validate(self) -> None:
        if self.behavior is Behavior.BOT_SCAN and self.scan_targets < 2:
            raise ValueError("BOT_SCAN needs at least 2 targets")
        if self.behavior is Behavior.BOT_SCAN and self.scan_gap_s <= 0:
            raise ValueError("scan gap must be positive")
        if self.behavior is Behavior.BENIGN_IPERF and self.rate_mbps <= 0:
            raise ValueError("iperf rate must be positive")
        if self.behavior is Behavior.BENIGN_WEB and not 1 <= self.web_servers <= 3:
            raise ValueError("BENIGN_WEB talks to 1..3 servers")

    @property
    def is_bot(self) -> bool:
        return self.behavior is Behavior.BOT_SCAN


Timed = tuple[float, PacketDescriptor]


def _up(p: UeProfile, dst: str, sport: int, dport: int, size: int) -> PacketDescriptor:
    return PacketDescriptor(FlowKey(p.ue_ipv4_addr, dst, sport, dport), p.pdu_session_id, p.ue_ipv4_addr, size, UPLINK)


def _down(p: UeProfile, src: str, sport: int, dport: int, size: int) -> PacketDescriptor:
    return PacketDescriptor(FlowKey(src, p.ue_ipv4_addr, sport, dport), p.pdu_session_id, p.ue_ipv4_addr, size,
                            DOWNLINK)


def iperf_interval(rate_mbps: float, size: int = IPERF_PACKET) -> float:
    return size * 8 / (rate_mbps * 1e6)


def _iperf(p: UeProfile, servers: Sequence[str]) -> Iterator[Timed]:
    rng = random.Random(p.seed)
    server = servers[0]
    sport = rng.randint(30000, 60000)
    dt = iperf_interval(p.rate_mbps)
    for i in itertools.count():
        t = p.start_s + i * dt
        yield t, _up(p, server, sport, 5201, IPERF_PACKET)
        if (i + 1) % p.ack_every == 0:
            yield t + dt / 2, _down(p, server, 5201, sport, ACK_SIZE)


def scan_order(p: UeProfile, servers: Sequence[str]) -> list[str]:
    if len(servers) < p.scan_targets:
        raise ValueError(f"BOT_SCAN wants {p.scan_targets} servers, scenario has {len(servers)}")
    targets = list(servers[: p.scan_targets])
    random.Random(p.seed).shuffle(targets)
    return targets


def _scan(p: UeProfile, servers: Sequence[str]) -> Iterator[Timed]:
    rng = random.Random(p.seed + 1)
    targets = scan_order(p, servers)
    for k in itertools.count():
        t = p.start_s + k * p.scan_gap_s
        dst = targets[k % len(targets)]
        sport = rng.randint(30000, 60000)
        for j in range(p.scan_ul_packets):
            yield t + j * SCAN_STEP, _up(p, dst, sport, SCAN_PORT, SCAN_SIZE)
        yield t + p.scan_ul_packets * SCAN_STEP, _down(p, dst, SCAN_PORT, sport, SCAN_SIZE)


def _web(p: UeProfile, servers: Sequence[str]) -> Iterator[Timed]:
    rng = random.Random(p.seed)
    pool = rng.sample(list(servers), min(p.web_servers, len(servers)))
    t = p.start_s
    while True:
        dst = rng.choice(pool)
        sport = rng.randint(30000, 60000)
        req, resp = rng.randint(1, 3), rng.randint(5, 30)
        for j in range(req):
            yield t + j * 1e-3, _up(p, dst, sport, 443, 400)
        for j in range(resp):
            yield t + 0.01 + j * 1e-3, _down(p, dst, 443, sport, 1400)
        t += 0.05 + rng.expovariate(1.0 / p.web_think_s)  # the next page starts after this one ends


_GENERATORS = {Behavior.BENIGN_IPERF: _iperf, Behavior.BOT_SCAN: _scan, Behavior.BENIGN_WEB: _web}


def generate_traffic(profile: UeProfile, servers: Sequence[str], until_s: Optional[float] = None) -> Iterator[Timed]:
    """Descriptors with their send offsets in seconds, in time order. Infinite unless ``until_s`` is given."""
    profile.validate()
    for t, d in _GENERATORS[profile.behavior](profile, servers):
        if until_s is not None and t >= until_s:
            return
        yield t, d


def merge_streams(streams: Sequence[Iterator[Timed]]) -> Iterator[Timed]:
    return heapq.merge(*streams, key=lambda x: x[0])


def _count_below(first: float, step: float, limit: float) -> int:
    """How many k >= 0 have first + k*step < limit, evaluated with the generators' float arithmetic."""
    if first >= limit:
        return 0
    n = max(0, math.ceil((limit - first) / step))
    while first + n * step < limit:
        n += 1
    while n > 0 and first + (n - 1) * step >= limit:
        n -= 1
    return n


def flow_totals(profile: UeProfile, servers: Sequence[str], duration_s: float) -> dict:
    """Per remote address, (ul_packets, dl_packets, ul_bytes, dl_bytes) sent in [0, duration_s).

    IPERF and SCAN are counted in closed form; WEB runs the generator.
    """
    profile.validate()
    out: dict = {}
    b = profile.behavior
    if b is Behavior.BENIGN_IPERF:
        dt = iperf_interval(profile.rate_mbps)
        n_ul = _count_below(profile.start_s, dt, duration_s)
        # packet i (0-based) is followed by an ack when (i+1) % every == 0; only the last one can fall past the end
        e = profile.ack_every
        n_dl = n_ul // e
        if n_dl and profile.start_s + (n_dl * e - 1) * dt + dt / 2 >= duration_s:
            n_dl -= 1
        if n_ul:
            out[servers[0]] = (n_ul, n_dl, n_ul * IPERF_PACKET, n_dl * ACK_SIZE)
        return out
    if b is Behavior.BOT_SCAN:
        targets = scan_order(profile, servers)
        k = profile.scan_ul_packets
        m = len(targets)
        for i, dst in enumerate(targets):
            # exchange c for this target starts at start + (c*m + i)*gap
            n = _count_below(profile.start_s + i * profile.scan_gap_s, m * profile.scan_gap_s, duration_s)
            if n == 0:
                continue
            last = profile.start_s + ((n - 1) * m + i) * profile.scan_gap_s
            ul = (n - 1) * k + sum(1 for j in range(k) if last + j * SCAN_STEP < duration_s)
            dl = n - (0 if last + k * SCAN_STEP < duration_s else 1)
            out[dst] = (ul, dl, ul * SCAN_SIZE, dl * SCAN_SIZE)
        return out
    for _, d in generate_traffic(profile, servers, until_s=duration_s):
        remote = d.flow.dst_ip if d.direction is UPLINK else d.flow.src_ip
        ul, dl, ub, db = out.get(remote, (0, 0, 0, 0))
        if d.direction is UPLINK:
            out[remote] = (ul + 1, dl, ub + d.size_bytes, db)
        else:
            out[remote] = (ul, dl + 1, ub, db + d.size_bytes)
    return out


def probe_descriptor(profile: UeProfile, target: str, now_ns: int) -> PacketDescriptor:
    return PacketDescriptor(FlowKey(profile.ue_ipv4_addr, target, 0, 0), profile.pdu_session_id,
                            profile.ue_ipv4_addr, 84, UPLINK, PacketKind.PROBE, now_ns)
