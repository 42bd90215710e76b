"""Run artifacts: per-run breakdown CSV, merged event log and per-interval summary."""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .scenario import RunResult, compute_breakdown

BREAKDOWN_FIELDS = ("run", "interval", "t1", "t2", "t3", "inference_s", "timed_out")


def _mean_std(xs: Sequence[float]) -> tuple[Optional[float], Optional[float]]:
    if not xs:
        return None, None
    return statistics.fmean(xs), (statistics.stdev(xs) if len(xs) > 1 else 0.0)


def summarize(results: Iterable[RunResult]) -> list[dict]:
    """Mean and sample standard deviation of t1/t2/t3 per collection interval, over completed runs."""
    by: dict = {}
    for r in results:
        by.setdefault(r.interval, []).append(r)
    out = []
    for interval in sorted(by):
        rs = by[interval]
        row: dict = {"interval": interval, "runs": len(rs), "completed": sum(r.breakdown.complete for r in rs)}
        for name in ("t1", "t2", "t3"):
            vals = [getattr(r.breakdown, name) for r in rs if getattr(r.breakdown, name) is not None]
            row[f"{name}_mean"], row[f"{name}_std"] = _mean_std(vals)
        inf = [x for r in rs for x in r.inference_s]
        row["inference_mean_s"] = statistics.fmean(inf) if inf else None
        out.append(row)
    return out


def emit_report(results: Sequence[RunResult], out_dir: str | Path) -> dict:
    """Write breakdown.csv, events.jsonl and summary.json under ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"breakdown": out / "breakdown.csv", "events": out / "events.jsonl", "summary": out / "summary.json"}
    with open(paths["breakdown"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BREAKDOWN_FIELDS)
        for r in results:
            b = r.breakdown
            inf = statistics.fmean(r.inference_s) if r.inference_s else ""
            w.writerow([r.run, r.interval, _cell(b.t1), _cell(b.t2), _cell(b.t3), _cell(inf), int(r.timed_out)])
    with open(paths["events"], "w") as fh:
        for r in results:
            for e in sorted(r.events, key=lambda e: e["t"]):
                fh.write(json.dumps({**e, "run": r.run, "interval": r.interval}) + "\n")
    paths["summary"].write_text(json.dumps(summarize(results), indent=2) + "\n")
    return paths


def _cell(x) -> str:
    return "" if x is None or x == "" else f"{x:.6f}"


def read_breakdown(path: str | Path) -> list[dict]:
    ints = {"run", "interval", "timed_out"}
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: None if v == "" else int(v) if k in ints else float(v) for k, v in row.items()})
    return rows


def results_from_events(path: str | Path) -> list[RunResult]:
    """Recompute every run's breakdown from a merged events.jsonl (as written by emit_report)."""
    groups: dict = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                e = json.loads(line)
                groups.setdefault((e.get("interval", 0), e.get("run", 0)), []).append(e)
    out = []
    for (interval, run), evs in sorted(groups.items()):
        starts = [e for e in evs if e["kind"] == "attack_start"]
        bots = sorted({e["ue"] for e in starts})
        attack = min((e["at"] for e in starts), default=None)
        r = compute_breakdown(evs, bots, attack)
        r.run, r.interval = run, interval
        out.append(r)
    return out
