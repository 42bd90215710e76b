"""
One closed-loop run
===================

All four services start in this process. A bot starts scanning part-way into
a report window; the run stops shortly after its pings stop getting answers.
"""

import logging

from nwdaf_loop.harness.scenario import ScenarioConfig, run_scenario

logging.basicConfig(level=logging.WARNING)

cfg = ScenarioConfig(runs=2, duration_s=30)
for r in run_scenario(cfg, intervals=[1, 3]):
    b = r.breakdown
    print(f"interval {r.interval}s run {r.run}: first report t1={b.t1:.2f}s  detection t2={b.t2:.2f}s  "
          f"ban t3={b.t3:.2f}s")
    ok, total = r.probes_after_release["10.42.0.2"]
    print(f"    bot probes answered after release: {ok}/{total}; benign UEs released: "
          f"{sorted(set(r.released) - {'10.42.0.2'}) or 'none'}")
    if r.inference_s:
        print(f"    mean model inference {1e3 * sum(r.inference_s) / len(r.inference_s):.1f} ms")

    # the bot's path through the event log, from the first packet on
    firsts = {}
    for e in sorted(r.events, key=lambda e: e["t"]):
        if e.get("ue") != "10.42.0.2" or e["t"] < r.attack_start or e["kind"] in firsts:
            continue
        if e["kind"] == "nwdaf_detection" and e["label"] != "ANOMALOUS":
            continue
        if e["kind"] in ("attack_start", "nwdaf_report_stored", "nwdaf_detection", "smf_released"):
            firsts[e["kind"]] = e["t"]
    for kind, t in firsts.items():
        print(f"    +{t - r.attack_start:6.3f}s  {kind}")
