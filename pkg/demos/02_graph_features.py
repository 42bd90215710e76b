"""
From usage reports to a communication graph
===========================================

A scanner touches many hosts with little traffic each; a bulk transfer moves
a lot of packets to one host. The five node features make that visible.
"""

import json
from datetime import datetime, timedelta, timezone

import numpy as np

from nwdaf_loop.ees.model import (EesNotification, EventType, FlowInformation, Snssai, UsageMeasurementItem,
                                  VolumeMeasurement)
from nwdaf_loop.engine import FEATURE_SCHEMA, build_comm_graph, extract_features, weighted_betweenness

now = datetime(2025, 3, 27, 18, 0, 0, tzinfo=timezone.utc)


def report(ue, flows):
    items = []
    for dst, ul, dl in flows:
        pf = json.dumps({"SrcIp": ue, "DstIp": dst, "SrcPort": 40000, "DstPort": 8080})
        items.append(UsageMeasurementItem(FlowInformation(pf), VolumeMeasurement.of(ul * 60, dl * 60, ul, dl)))
    return EesNotification(EventType.USER_DATA_USAGE_MEASURES, ue, Snssai(1), now, now - timedelta(seconds=3),
                           items)


scanner = report("10.42.0.2", [(f"172.16.0.{i}", 1, 1) for i in range(1, 21)])
bulk = report("10.42.0.3", [("172.16.0.1", 4800, 2400)])
g = build_comm_graph([scanner, bulk])
print(f"{len(g.nodes)} nodes, {len(g.edges)} edges")

feats = extract_features(g)
print(f"\n{'node':<12}" + "".join(f"{c:>13}" for c in FEATURE_SCHEMA))
for node in ("10.42.0.2", "10.42.0.3", "172.16.0.1", "172.16.0.7"):
    print(f"{node:<12}" + "".join(f"{x:>13.3g}" for x in feats[node].vector()))

# replies make every edge two-way, so the scanner relays between its targets and 172.16.0.1 links both UEs
bc = weighted_betweenness(g)
print("\nnon-zero betweenness:", {v: round(b, 3) for v, b in bc.items() if b})

# the same graph as a feature matrix, in fixed column order
X = np.array([feats[v].vector() for v in sorted(g.ues)])
print("\nUE feature matrix\n", X)
