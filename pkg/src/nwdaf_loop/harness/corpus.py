"""Flow-record CSV ingestion and the synthetic labeled corpus used to train the detector.

Flow CSV columns: srcIp,dstIp,srcPort,dstPort,packets,bytes,label. Each row is
one direction of a flow. Labels containing "bot" mark bot traffic, "normal" or
"benign" mark benign traffic, anything else (e.g. "background") is unlabeled.
CTU-13 binetflow headers (SrcAddr, DstAddr, Sport, Dport, TotPkts, TotBytes,
Label) are accepted as aliases.
"""

from __future__ import annotations

import csv
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ..ees.model import is_ipv4
from ..engine.graph import CommGraph, extract_features
from .traffic import Behavior, UeProfile, flow_totals

log = logging.getLogger(__name__)

FLOW_COLUMNS = ("srcIp", "dstIp", "srcPort", "dstPort", "packets", "bytes", "label")
_ALIASES = {"srcaddr": "srcIp", "dstaddr": "dstIp", "sport": "srcPort", "dport": "dstPort",
            "totpkts": "packets", "totbytes": "bytes"}
PING_TARGET = "8.8.8.8"


class MalformedRow(ValueError):
    pass


@dataclass
class FlowRecord:
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    packets: int
    bytes: int
    label: str = "background"


def label_class(label: str) -> Optional[int]:
    low = label.lower()
    if "bot" in low:
        return 1
    if "normal" in low or "benign" in low:
        return 0
    return None


def _port(v: str) -> int:
    v = (v or "").strip()
    if not v:
        return 0
    return int(v, 16) if v.lower().startswith("0x") else int(v)


def _parse(row: dict) -> FlowRecord:
    try:
        rec = FlowRecord(row["srcIp"].strip(), row["dstIp"].strip(), _port(row.get("srcPort", "")),
                         _port(row.get("dstPort", "")), int(row["packets"]), int(row.get("bytes") or 0),
                         (row.get("label") or "background").strip())
    except (KeyError, ValueError, AttributeError) as exc:
        raise MalformedRow(repr(exc)) from None
    if not (is_ipv4(rec.src_ip) and is_ipv4(rec.dst_ip)) or rec.packets < 0:
        raise MalformedRow(f"bad addresses or counts: {rec}")
    return rec


@dataclass
class FeatureRows:
    nodes: list = field(default_factory=list)
    X: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    y: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    malformed: int = 0
    graph: Optional[CommGraph] = None

    def __len__(self) -> int:
        return len(self.nodes)

    def rows(self) -> list:
        return [(x.tolist(), int(lab)) for x, lab in zip(self.X, self.y)]


def features_from_flows(records: Iterable[FlowRecord], malformed: int = 0) -> FeatureRows:
    """Graph over all flows; one feature row per node that sources a labeled flow."""
    g = CommGraph()
    labels: dict[str, int] = {}
    for r in records:
        g.add_edge(r.src_ip, r.dst_ip, r.packets)
        c = label_class(r.label)
        if c is not None:
            labels[r.src_ip] = max(labels.get(r.src_ip, 0), c)
    nodes = [v for v in g.nodes if v in labels]
    feats = extract_features(g, nodes)
    X = np.array([feats[v].vector() for v in nodes], dtype=float).reshape(-1, 5)
    y = np.array([labels[v] for v in nodes], dtype=int)
    return FeatureRows(nodes, X, y, malformed, g)


def ingest_flow_csv(path: str | Path) -> FeatureRows:
    records, bad = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for raw in reader:
            row = {_ALIASES.get(k.strip().lower(), k.strip()): v for k, v in raw.items() if k is not None}
            if "label" not in row and "Label" in row:
                row["label"] = row["Label"]
            try:
                records.append(_parse(row))
            except MalformedRow as exc:
                bad += 1
                log.debug("skipping malformed row %r: %s", raw, exc)
    if bad:
        log.warning("%s: skipped %d malformed rows", path, bad)
    return features_from_flows(records, bad)


def write_flow_csv(path: str | Path, records: Iterable[FlowRecord]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FLOW_COLUMNS)
        for r in records:
            w.writerow([r.src_ip, r.dst_ip, r.src_port, r.dst_port, r.packets, r.bytes, r.label])
            n += 1
    return n


# -- synthetic corpus ------------------------------------------------------------

def _scene_profiles(rng: random.Random, scene: int, n_benign: int, n_bot: int, duration: float
                    ) -> list[UeProfile]:
    profiles = []
    for j in range(n_benign + n_bot):
        ue = f"10.{100 + scene // 250}.{scene % 250}.{j + 2}"
        seed = rng.randrange(2**31)
        if j >= n_benign:
            start = rng.uniform(0, 0.9 * duration)
            profiles.append(UeProfile(ue, j + 1, Behavior.BOT_SCAN, scan_targets=rng.randint(2, 20),
                                      scan_gap_s=rng.uniform(0.02, 0.3), scan_ul_packets=rng.randint(1, 3),
                                      start_s=start, seed=seed))
        elif rng.random() < 0.5:
            profiles.append(UeProfile(ue, j + 1, Behavior.BENIGN_IPERF, rate_mbps=rng.uniform(0.5, 10.0),
                                      ack_every=rng.randint(1, 4), start_s=rng.uniform(0, 0.5 * duration),
                                      seed=seed))
        else:
            profiles.append(UeProfile(ue, j + 1, Behavior.BENIGN_WEB, web_servers=rng.randint(1, 3),
                                      web_think_s=rng.uniform(0.5, 5.0), start_s=rng.uniform(0, 0.5 * duration),
                                      seed=seed))
    return profiles


def scene_flows(profiles: Sequence[UeProfile], servers: Sequence[str], duration: float,
                rng: random.Random, ping_target: str = PING_TARGET) -> list[FlowRecord]:
    """Per-direction flow records for one observation window of [0, duration)."""
    out = []
    for p in profiles:
        lab = "botnet" if p.is_bot else "normal"
        # benign UEs talk to a server chosen per UE; the bot walks the scene's server list
        order = list(servers) if p.is_bot else list(servers[rng.randrange(len(servers)):]) + list(servers)
        for remote, (ul, dl, ub, db) in flow_totals(p, order, duration).items():
            if ul:
                out.append(FlowRecord(p.ue_ipv4_addr, remote, 0, 0, ul, ub, lab))
            if dl:
                out.append(FlowRecord(remote, p.ue_ipv4_addr, 0, 0, dl, db, "background"))
        pings = int(duration)  # one probe per second, from the start of the window
        if pings:
            out.append(FlowRecord(p.ue_ipv4_addr, ping_target, 0, 0, pings, 84 * pings, lab))
    return out


def synthetic_flows(seed: int = 1, benign: int = 200, bots: int = 50, servers_per_scene: int = 20
                    ) -> list[FlowRecord]:
    """Scenes resembling the live set-up, each in its own address block so their graphs stay disjoint."""
    rng = random.Random(seed)
    scenes = max(1, bots)
    records: list[FlowRecord] = []
    for s in range(scenes):
        n_bot = bots // scenes + (1 if s < bots % scenes else 0)
        n_benign = benign // scenes + (1 if s < benign % scenes else 0)
        duration = rng.uniform(1.0, 60.0)
        servers = [f"172.{16 + s // 250}.{s % 250}.{i}" for i in range(1, servers_per_scene + 1)]
        profiles = _scene_profiles(rng, s, n_benign, n_bot, duration)
        records += scene_flows(profiles, servers, duration, rng, ping_target=f"9.9.{s % 250}.{s // 250 + 1}")
    return records
