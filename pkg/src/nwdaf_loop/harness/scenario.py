"""Closed-loop scenario runs and the t1/t2/t3 latency breakdown."""

from __future__ import annotations

import logging
import random
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..engine.graph import FEATURE_SCHEMA
from ..mlprov.forest import ForestModel, train_forest
from ..net import EventLog, load_config
from .corpus import features_from_flows, synthetic_flows
from .live import Prober, TrafficDriver
from .stack import InprocStack, MultiprocStack, ServiceStartupFailure
from .traffic import Behavior, UeProfile, generate_traffic, merge_streams

log = logging.getLogger(__name__)


class ScenarioTimeout(RuntimeError):
    pass


def default_servers(n: int = 20) -> list[str]:
    return [f"172.16.0.{i}" for i in range(1, n + 1)]


def default_ues() -> list[UeProfile]:
    return [UeProfile("10.42.0.2", 1, Behavior.BOT_SCAN, scan_targets=20, scan_gap_s=0.05, seed=11),
            UeProfile("10.42.0.3", 2, Behavior.BENIGN_IPERF, rate_mbps=2.0, seed=12)]


@dataclass
class ScenarioConfig:
    ues: list[UeProfile] = field(default_factory=default_ues)
    servers: list[str] = field(default_factory=default_servers)
    collection_period_s: int = 1
    smf_period_s: int = 1
    duration_s: float = 30.0
    runs: int = 1
    probe_timeout: float = 0.5
    probe_interval: float = 1.0
    warmup_s: float = 1.5
    observe_s: float = 2.0
    seed: int = 1
    mode: str = "inproc"
    threshold: float = 0.5
    model_path: Optional[str] = None

    def validate(self) -> None:
        if self.duration_s <= self.collection_period_s:
            raise ValueError("duration must exceed the collection period")
        if self.mode not in ("inproc", "multiproc"):
            raise ValueError(f"mode must be inproc or multiproc, got {self.mode!r}")
        for p in self.ues:
            p.validate()

    @property
    def bots(self) -> list[UeProfile]:
        return [p for p in self.ues if p.is_bot]


def load_scenario(path: str | Path) -> tuple[ScenarioConfig, list[int]]:
    """Scenario TOML; ``collection_periods = [1, 3, 5]`` runs the sweep, else ``collection_period_s``."""
    cfg = load_config(path)
    servers = cfg.get("servers", 20)
    ues = [UeProfile(u["ue_ipv4_addr"], int(u["pdu_session_id"]), Behavior(u["behavior"]),
                     **{k: v for k, v in u.items() if k not in ("ue_ipv4_addr", "pdu_session_id", "behavior")})
           for u in cfg.get("ues", [])] or default_ues()
    sc = ScenarioConfig(
        ues=ues,
        servers=default_servers(servers) if isinstance(servers, int) else list(servers),
        collection_period_s=int(cfg.get("collection_period_s", 1)),
        smf_period_s=int(cfg.get("smf_period_s", 1)),
        duration_s=float(cfg.get("duration_s", 30.0)),
        runs=int(cfg.get("runs", 1)),
        probe_timeout=float(cfg.get("probe_timeout", 0.5)),
        seed=int(cfg.get("seed", 1)),
        mode=cfg.get("mode", "inproc"),
        threshold=float(cfg.get("threshold", 0.5)),
        model_path=cfg.get("model"),
    )
    periods = [int(x) for x in cfg.get("collection_periods", [sc.collection_period_s])]
    sc.validate()
    return sc, periods


def default_model(seed: int = 1, num_trees: int = 100, max_depth: int = 10) -> ForestModel:
    """Forest trained on the full synthetic corpus for ``seed``."""
    rows = features_from_flows(synthetic_flows(seed))
    return train_forest(rows.X, rows.y, num_trees=num_trees, max_depth=max_depth, seed=seed,
                        feature_schema=FEATURE_SCHEMA)


# -- breakdown -----------------------------------------------------------------------

@dataclass
class LatencyBreakdown:
    t1: Optional[float]
    t2: Optional[float]
    t3: Optional[float]

    @property
    def complete(self) -> bool:
        return None not in (self.t1, self.t2, self.t3)

    @property
    def ordered(self) -> bool:
        return self.complete and 0 < self.t1 <= self.t2 <= self.t3


@dataclass
class RunResult:
    run: int
    interval: int
    attack_start: Optional[float]
    breakdown: LatencyBreakdown
    released: dict = field(default_factory=dict)         # ue -> wall time of SMF release
    flagged: dict = field(default_factory=dict)          # ue -> first ANOMALOUS detection time
    probes_after_release: dict = field(default_factory=dict)  # ue -> (successes, total)
    probe_failures: dict = field(default_factory=dict)   # ue -> failures overall
    inference_s: list = field(default_factory=list)
    timed_out: bool = False
    bots: tuple = ()
    events: list = field(default_factory=list)

    @property
    def false_positives(self) -> set:
        return {ue for ue in self.flagged if ue not in self.bots}


def compute_breakdown(events: Sequence[dict], bots: Iterable[str], attack_start: Optional[float],
                      targets: Optional[Iterable[str]] = None) -> RunResult:
    """Pure function of one run's event log (wall-clock ``t`` fields).

    ``targets`` are the scan destinations; a stored report counts for t1 only
    if it carries a flow to one of them. When omitted they are taken from the
    run's ``scenario`` event, and failing that any remote address counts.
    """
    bots = tuple(bots)
    if targets is None:
        sc = next((e for e in events if e["kind"] == "scenario"), None)
        targets = sc.get("servers") if sc else None
    targets = None if targets is None else set(targets)
    flagged: dict = {}
    released: dict = {}
    probes: dict = {}
    inference = []
    t1 = t2 = t3 = None
    bot = bots[0] if bots else None
    for e in sorted(events, key=lambda e: e["t"]):
        k = e["kind"]
        after = attack_start is not None and e["t"] >= attack_start
        if k == "nwdaf_detection":
            if e.get("inferenceSeconds"):
                inference.append(e["inferenceSeconds"])
            if e["label"] == "ANOMALOUS":
                flagged.setdefault(e["ue"], e["t"])
                if t2 is None and after and e["ue"] == bot:
                    t2 = e["t"] - attack_start
        elif k == "smf_released":
            released.setdefault(e["ue"], e["t"])
        elif k == "probe":
            probes.setdefault(e["ue"], []).append(e)
        elif k == "nwdaf_report_stored" and t1 is None and after and e["ue"] == bot:
            remotes = set(e["remotes"])
            if remotes and (targets is None or remotes & targets):
                t1 = e["t"] - attack_start
    after_release: dict = {}
    failures: dict = {}
    for ue, ps in probes.items():
        ps.sort(key=lambda e: e["sentAt"])
        failures[ue] = sum(1 for p in ps if not p["success"])
        if ue in released:
            later = [p for p in ps if p["sentAt"] > released[ue]]
            after_release[ue] = (sum(1 for p in later if p["success"]), len(later))
    if attack_start is not None and bot is not None:
        seen_ok = False
        for p in probes.get(bot, []):
            if p["success"]:
                seen_ok = True
            elif seen_ok and p["sentAt"] >= attack_start:
                t3 = p["sentAt"] - attack_start
                break
    return RunResult(run=0, interval=0, attack_start=attack_start, breakdown=LatencyBreakdown(t1, t2, t3),
                     released=released, flagged=flagged, probes_after_release=after_release,
                     probe_failures=failures, inference_s=inference, bots=bots, events=list(events))


# -- running -------------------------------------------------------------------------

def _phase_fractions(runs: int, seed: int) -> list[float]:
    """One attack phase per run, stratified over the report period and shuffled."""
    rng = random.Random(seed)
    fr = [(i + rng.random()) / runs for i in range(runs)]
    rng.shuffle(fr)
    return fr


def run_once(cfg: ScenarioConfig, interval: int, run: int, model_json: str, *, phase: float,
             workdir: Path) -> RunResult:
    events = EventLog(workdir / "harness.events.jsonl", source="harness")
    Stack = InprocStack if cfg.mode == "inproc" else MultiprocStack
    stack = Stack(cfg.ues, model_json, collection_period=interval, smf_period=cfg.smf_period_s, workdir=workdir,
                  events=events, threshold=cfg.threshold)
    driver = None
    probers: list[Prober] = []
    try:
        stack.start()
        events.emit("scenario", run=run, interval=interval, phase=phase, servers=list(cfg.servers),
                    bots=[b.ue_ipv4_addr for b in cfg.bots])
        origin_mono, origin_wall = time.monotonic(), time.time()
        # the attack begins `phase` of the way into a report window, at least warmup_s from now
        w0 = stack.report_origin_wall()
        k = max(0, int((origin_wall + cfg.warmup_s - w0) // interval) + 1)
        attack_wall = w0 + (k + phase) * interval
        while attack_wall < origin_wall + cfg.warmup_s:
            attack_wall += interval
        profiles = []
        for p in cfg.ues:
            start = attack_wall - origin_wall if p.is_bot else p.start_s
            profiles.append(UeProfile(**{**p.__dict__, "start_s": start, "seed": p.seed + 1000 * run}))
        stream = merge_streams([generate_traffic(p, cfg.servers) for p in profiles])
        for p in profiles:
            pr = Prober(p, stack.ingest_address, timeout=cfg.probe_timeout, interval=cfg.probe_interval,
                        events=events)
            pr.start()
            probers.append(pr)
        driver = TrafficDriver(stack.ingest_address, stream, bots=frozenset(b.ue_ipv4_addr for b in cfg.bots),
                               events=events, origin=(origin_mono, origin_wall))
        driver.start()
        deadline = origin_mono + cfg.duration_s
        bot_addrs = {b.ue_ipv4_addr for b in cfg.bots}
        done_at = None
        timed_out = True
        while time.monotonic() < deadline:
            if bot_addrs and done_at is None:
                # stop once every bot has seen its first post-success probe failure
                failed = set()
                for pr in probers:
                    if pr.profile.ue_ipv4_addr in bot_addrs:
                        oks = [r.success for r in pr.results]
                        if True in oks and False in oks[oks.index(True):]:
                            failed.add(pr.profile.ue_ipv4_addr)
                if failed == bot_addrs:
                    done_at = time.monotonic()
            if done_at is not None and time.monotonic() - done_at >= cfg.observe_s:
                timed_out = False
                break
            time.sleep(0.05)
        if not bot_addrs:
            timed_out = False
    finally:
        if driver is not None:
            driver.stop()
        for pr in probers:
            pr.stop()
        stack.stop()
    all_events = stack.all_events()
    res = compute_breakdown(all_events, [b.ue_ipv4_addr for b in cfg.bots], driver.attack_start if driver else None,
                            cfg.servers)
    res.run, res.interval, res.timed_out = run, interval, timed_out
    for e in res.events:
        e.setdefault("run", run)
        e.setdefault("interval", interval)
    if timed_out:
        log.warning("run %d (interval %ds): bot not mitigated within %.0fs", run, interval, cfg.duration_s)
    events.close()
    return res


def run_scenario(cfg: ScenarioConfig, *, intervals: Optional[Sequence[int]] = None,
                 model: Optional[ForestModel] = None, workdir: Optional[str | Path] = None,
                 on_result=None) -> list[RunResult]:
    """``cfg.runs`` runs for each collection interval; services are started fresh for every run."""
    cfg.validate()
    intervals = list(intervals or [cfg.collection_period_s])
    if model is None:
        model = ForestModel.loads(Path(cfg.model_path).read_text()) if cfg.model_path else default_model(cfg.seed)
    model_json = model.dumps()
    own_tmp = workdir is None
    root = Path(tempfile.mkdtemp(prefix="loop-")) if own_tmp else Path(workdir)
    results = []
    try:
        for interval in intervals:
            phases = _phase_fractions(cfg.runs, cfg.seed * 7919 + interval)
            for run in range(cfg.runs):
                d = root / f"i{interval}-r{run}"
                d.mkdir(parents=True, exist_ok=True)
                r = run_once(cfg, interval, run, model_json, phase=phases[run], workdir=d)
                results.append(r)
                if on_result is not None:
                    on_result(r)
    finally:
        if own_tmp:
            shutil.rmtree(root, ignore_errors=True)
    return results
