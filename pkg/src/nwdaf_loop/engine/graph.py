"""Directed IP communication graph, node degrees and weighted betweenness."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

from ..upf.measure import parse_pack_filt_id

log = logging.getLogger(__name__)

FEATURE_SCHEMA = ("inDegree", "outDegree", "wInDegree", "wOutDegree", "wBetweenness")
PATH_RTOL = 1e-12


class UnknownNode(KeyError):
    pass


class MissingFlowInfo(ValueError):
    pass


class CommGraph:
    """Nodes are IPv4 strings; edge (src, dst) carries a positive packet count."""

    def __init__(self) -> None:
        self.nodes: dict[str, None] = {}  # insertion-ordered set
        self.out: dict[str, dict[str, int]] = {}
        self.inc: dict[str, dict[str, int]] = {}
        self.ues: set[str] = set()
        self.skipped = 0

    def add_node(self, v: str) -> None:
        if v not in self.nodes:
            self.nodes[v] = None
            self.out[v] = {}
            self.inc[v] = {}

    def add_edge(self, src: str, dst: str, weight: int) -> None:
        """Add (or merge into) edge src->dst. Self-loops and non-positive weights are ignored."""
        self.add_node(src)
        self.add_node(dst)
        if src == dst or weight <= 0:
            return
        self.out[src][dst] = self.out[src].get(dst, 0) + weight
        self.inc[dst][src] = self.out[src][dst]

    @property
    def edges(self) -> dict[tuple[str, str], int]:
        return {(s, d): w for s, nbrs in self.out.items() for d, w in nbrs.items()}

    def __contains__(self, v: object) -> bool:
        return v in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CommGraph):
            return NotImplemented
        return set(self.nodes) == set(other.nodes) and self.edges == other.edges and self.ues == other.ues

    def scaled(self, k: int) -> "CommGraph":
        g = CommGraph()
        for v in self.nodes:
            g.add_node(v)
        for (s, d), w in self.edges.items():
            g.add_edge(s, d, w * k)
        g.ues = set(self.ues)
        return g


def _notification(report):
    return getattr(report, "notification", report)


def build_comm_graph(reports: Iterable) -> CommGraph:
    """Graph from stored usage reports (or bare notifications).

    Each PER_FLOW item adds ul packets on UE->remote and dl packets on
    remote->UE. Reports with an item lacking flowInfo or volume are skipped
    whole and counted in ``graph.skipped``.
    """
    g = CommGraph()
    for r in reports:
        n = _notification(r)
        try:
            flows = []
            for item in n.items:
                if item.flow_info is None or item.volume is None:
                    raise MissingFlowInfo(n.ue_ipv4_addr)
                flows.append((parse_pack_filt_id(item.flow_info.pack_filt_id), item.volume))
        except MissingFlowInfo:
            g.skipped += 1
            continue
        g.ues.add(n.ue_ipv4_addr)
        for flow, vol in flows:
            src, dst = flow.src_ip, flow.dst_ip
            g.add_edge(src, dst, vol.ul_nb_of_packets)
            g.add_edge(dst, src, vol.dl_nb_of_packets)
    if g.skipped:
        log.info("skipped %d reports without per-flow volume items", g.skipped)
    return g


def node_degrees(g: CommGraph, v: str) -> tuple[int, int, int, int]:
    """(inDegree, outDegree, weightedInDegree, weightedOutDegree)."""
    if v not in g.nodes:
        raise UnknownNode(v)
    inc, out = g.inc[v], g.out[v]
    return len(inc), len(out), sum(inc.values()), sum(out.values())


def edge_distance(weight: int) -> float:
    """Heavier communication means a shorter hop."""
    return 1.0 / weight


def _shorter(a: float, b: float) -> bool:
    return a < b and not _same(a, b)


def _same(a: float, b: float) -> bool:
    return abs(a - b) <= PATH_RTOL * max(abs(a), abs(b))


def weighted_betweenness(g: CommGraph) -> dict[str, float]:
    """Unnormalized directed betweenness with edge distance ``edge_distance(w)`` (Brandes)."""
    bc = dict.fromkeys(g.nodes, 0.0)
    for s in g.nodes:
        order: list[str] = []
        preds: dict[str, list[str]] = {v: [] for v in g.nodes}
        sigma = dict.fromkeys(g.nodes, 0)
        sigma[s] = 1
        dist: dict[str, float] = {s: 0.0}
        done: set[str] = set()
        heap = [(0.0, 0, s)]
        tie = 1
        while heap:
            d, _, v = heapq.heappop(heap)
            if v in done:
                continue
            done.add(v)
            order.append(v)
            for w, weight in g.out[v].items():
                nd = d + edge_distance(weight)
                if w not in dist or _shorter(nd, dist[w]):
                    dist[w] = nd
                    sigma[w] = sigma[v]
                    preds[w] = [v]
                    heapq.heappush(heap, (nd, tie, w))
                    tie += 1
                elif w not in done and _same(nd, dist[w]):
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = dict.fromkeys(g.nodes, 0.0)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


@dataclass(frozen=True)
class NodeFeatures:
    in_degree: int
    out_degree: int
    weighted_in_degree: int
    weighted_out_degree: int
    weighted_betweenness: float

    def vector(self) -> list[float]:
        return [self.in_degree, self.out_degree, self.weighted_in_degree, self.weighted_out_degree,
                self.weighted_betweenness]


def extract_features(g: CommGraph, nodes: Optional[Iterable[str]] = None) -> dict[str, NodeFeatures]:
    bc = weighted_betweenness(g)
    wanted = g.nodes if nodes is None else [v for v in nodes if v in g.nodes]
    return {v: NodeFeatures(*node_degrees(g, v), bc[v]) for v in wanted}
