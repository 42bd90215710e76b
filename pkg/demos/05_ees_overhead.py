"""
What event exposure costs the UPF
=================================

Ingest capacity and ping latency with the aggregation hook compiled out, with
the hook but nobody subscribed, and with one per-flow subscriber.
"""

from nwdaf_loop.harness.bench import overhead_bench

rows = overhead_bench([10, 100], duration=1.0, saturate_s=1.5, trials=2)
base = {r.rate_mbps: r for r in rows if r.variant == "BASELINE_NO_EES"}
print(f"{'variant':<16}{'Mbit/s':>7}{'achieved/s':>12}{'capacity/s':>12}{'vs base':>9}{'ping ms':>9}")
for r in rows:
    print(f"{r.variant:<16}{r.rate_mbps:>7g}{r.achieved:>12.0f}{r.saturated:>12.0f}"
          f"{r.saturated / base[r.rate_mbps].saturated:>9.2f}{r.probe_median_ms:>9.3f}")
