"""
A UPF that reports per-flow usage
=================================

Sessions, a subscription, some traffic and the report that comes out of it.
A simulated clock keeps the run instant and reproducible.
"""

import json

from nwdaf_loop.ees import codec
from nwdaf_loop.ees.model import EesSubscriptionRequest, EventType, Granularity, MeasurementType, ReportingMode
from nwdaf_loop.harness.traffic import Behavior, UeProfile, generate_traffic, merge_streams
from nwdaf_loop.upf import Upf

# a settable nanosecond clock; wall time follows it
t_ns = 0
upf = Upf(clock=lambda: t_ns, wall_clock=lambda: 1_743_098_459.0 + t_ns / 1e9)

bot = UeProfile("10.42.0.2", 1, Behavior.BOT_SCAN, scan_targets=5, scan_gap_s=0.2, seed=1)
web = UeProfile("10.42.0.3", 2, Behavior.BENIGN_IPERF, rate_mbps=0.1)
for p in (bot, web):
    upf.add_session(p.pdu_session_id, p.ue_ipv4_addr)

# per-flow volumes every 3 s, the collection set-up the NWDAF uses
req = EesSubscriptionRequest({EventType.USER_DATA_USAGE_MEASURES}, {MeasurementType.VOLUME_MEASUREMENT},
                             Granularity.PER_FLOW, ReportingMode(3), "http://127.0.0.1:9/sbi/notify")
sid = upf.handle_subscribe(req).subscription_id
print("subscription", sid)

servers = [f"172.16.0.{i}" for i in range(1, 21)]
reports = []
for t, desc in merge_streams([generate_traffic(p, servers, until_s=3.0) for p in (bot, web)]):
    t_ns = int(t * 1e9)
    upf.ingest_packet(desc)
t_ns = 3_000_000_000
reports = upf.notifier_tick()

for uri, n in reports:
    print(f"\n{n.ue_ipv4_addr}: {len(n.items)} flows")
    for item in n.items:
        flow = json.loads(item.flow_info.pack_filt_id)
        print(f"  -> {flow['DstIp']:<12} ul {item.volume.ul_volume:>6} B  dl {item.volume.dl_volume:>6} B")

# what goes over the wire
print("\n" + json.dumps(json.loads(codec.encode_notification(reports[0][1])), indent=2)[:600], "...")

# nothing is lost: reported bytes equal forwarded bytes
reported = sum(i.volume.total_volume for _, n in reports for i in n.items)
forwarded = sum(s.forwarded_bytes for s in upf.sessions())
print(f"\nreported {reported} B, forwarded {forwarded} B")
