"""Traffic generation, closed-loop scenarios, overhead bench and reporting."""

from .bench import VARIANTS, BenchRow, overhead_bench
from .corpus import FlowRecord, MalformedRow, features_from_flows, ingest_flow_csv, synthetic_flows
from .live import ProbeResult, Prober, TrafficDriver, probe_loop
from .report import emit_report, results_from_events, summarize
from .scenario import (LatencyBreakdown, RunResult, ScenarioConfig, ScenarioTimeout, compute_breakdown,
                       default_model, load_scenario, run_scenario)
from .stack import InprocStack, MultiprocStack, ServiceStartupFailure
from .traffic import Behavior, UeProfile, flow_totals, generate_traffic, merge_streams

__all__ = [
    "VARIANTS", "BenchRow", "overhead_bench",
    "FlowRecord", "MalformedRow", "features_from_flows", "ingest_flow_csv", "synthetic_flows",
    "ProbeResult", "Prober", "TrafficDriver", "probe_loop",
    "emit_report", "results_from_events", "summarize",
    "LatencyBreakdown", "RunResult", "ScenarioConfig", "ScenarioTimeout", "compute_breakdown", "default_model",
    "load_scenario", "run_scenario",
    "InprocStack", "MultiprocStack", "ServiceStartupFailure",
    "Behavior", "UeProfile", "flow_totals", "generate_traffic", "merge_streams",
]
