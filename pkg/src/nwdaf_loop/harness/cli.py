"""``loop`` command: closed-loop scenarios, the overhead bench, training data and reports."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence


def _run(args: argparse.Namespace) -> int:
    from .report import emit_report, summarize
    from .scenario import load_scenario, run_scenario

    cfg, intervals = load_scenario(args.config)
    if args.mode:
        cfg.mode = args.mode
    if args.runs:
        cfg.runs = args.runs
    if args.intervals:
        intervals = [int(x) for x in args.intervals.split(",")]

    def progress(r) -> None:
        b = r.breakdown
        status = "TIMEOUT" if r.timed_out else "ok"
        print(f"interval {r.interval}s run {r.run}: t1={_fmt(b.t1)} t2={_fmt(b.t2)} t3={_fmt(b.t3)} {status}",
              flush=True)

    results = run_scenario(cfg, intervals=intervals, on_result=progress)
    paths = emit_report(results, args.out)
    for row in summarize(results):
        print(json.dumps(row))
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return 0 if all(not r.timed_out for r in results) else 1


def _fmt(x: Optional[float]) -> str:
    return "-" if x is None else f"{x:.3f}s"


def _bench(args: argparse.Namespace) -> int:
    from .bench import VARIANTS, overhead_bench, write_bench_csv

    rates = [float(x) for x in args.rates.split(",")]
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    rows = overhead_bench(rates, variants, duration=args.duration, trials=args.trials)
    write_bench_csv(args.out, rows)
    print(f"{'variant':<16} {'Mbit/s':>7} {'offered/s':>10} {'achieved/s':>11} {'saturated/s':>12} {'probe ms':>9}")
    for r in rows:
        probe = "-" if r.probe_median_ms is None else f"{r.probe_median_ms:.3f}"
        print(f"{r.variant:<16} {r.rate_mbps:>7g} {r.offered:>10.0f} {r.achieved:>11.0f} {r.saturated:>12.0f} "
              f"{probe:>9}")
    print(f"wrote {args.out}")
    return 0


def _train_data(args: argparse.Namespace) -> int:
    from ..mlprov.dataset import write_feature_csv
    from .corpus import features_from_flows, synthetic_flows, write_flow_csv

    flows = list(synthetic_flows(args.seed, benign=args.benign, bots=args.bots))
    n = write_flow_csv(args.out, flows)
    print(f"wrote {n} flow records to {args.out}")
    if args.features:
        rows = features_from_flows(flows)
        write_feature_csv(args.features, rows.rows())
        print(f"wrote {len(rows)} feature rows ({int(rows.y.sum())} bot) to {args.features}")
    return 0


def _report(args: argparse.Namespace) -> int:
    from .report import emit_report, results_from_events, summarize

    results = results_from_events(args.inp)
    for r in results:
        b = r.breakdown
        print(f"interval {r.interval}s run {r.run}: t1={_fmt(b.t1)} t2={_fmt(b.t2)} t3={_fmt(b.t3)}")
    for row in summarize(results):
        print(json.dumps(row))
    if args.out:
        emit_report(results, args.out)
        print(f"wrote report to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loop", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a closed-loop scenario and write breakdown.csv/events.jsonl/summary.json")
    r.add_argument("--config", required=True, help="scenario TOML")
    r.add_argument("--mode", choices=("inproc", "multiproc"))
    r.add_argument("--runs", type=int, help="override runs per interval")
    r.add_argument("--intervals", help="comma-separated collection periods, e.g. 1,3,5")
    r.add_argument("--out", default="loop-out")
    r.set_defaults(fn=_run)

    b = sub.add_parser("bench", help="EES ingest overhead: baseline vs 0 vs 1 subscriber")
    b.add_argument("--rates", default="10,50,100", help="offered loads in Mbit/s (125-byte descriptors)")
    b.add_argument("--variants", help="subset of BASELINE_NO_EES,EES_0_SUB,EES_1_SUB")
    b.add_argument("--duration", type=float, default=1.0, help="seconds per paced trial")
    b.add_argument("--trials", type=int, default=3)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(fn=_bench)

    t = sub.add_parser("train-data", help="write the labeled synthetic flow corpus")
    t.add_argument("--out", required=True, help="flow CSV (srcIp,dstIp,srcPort,dstPort,packets,bytes,label)")
    t.add_argument("--seed", type=int, default=1)
    t.add_argument("--benign", type=int, default=200)
    t.add_argument("--bots", type=int, default=50)
    t.add_argument("--features", help="also write the per-node feature CSV for `mlprov train`")
    t.set_defaults(fn=_train_data)

    rp = sub.add_parser("report", help="recompute breakdowns and summary from an events.jsonl")
    rp.add_argument("--in", dest="inp", required=True)
    rp.add_argument("--out", help="directory to rewrite breakdown.csv/summary.json into")
    rp.set_defaults(fn=_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
