"""Bring the four network functions up, either in this process or as child processes."""

from __future__ import annotations

import json
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

from ..ees.model import Snssai
from ..net import EventLog, Unreachable, free_port, post, read_events, request
from .traffic import UeProfile


class ServiceStartupFailure(RuntimeError):
    pass


def _wait(cond, timeout: float, what: str) -> None:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if cond():
            return
        time.sleep(0.02)
    raise ServiceStartupFailure(f"timed out waiting for {what}")


class InprocStack:
    """UPF, ML provisioning, NWDAF and SMF as threads of this process sharing one event log."""

    def __init__(self, ues: Sequence[UeProfile], model_json: str, *, collection_period: int, smf_period: int,
                 workdir: Path, events: EventLog, threshold: float = 0.5) -> None:
        from ..mlprov.service import MlProvisionService
        from ..nwdaf.service import NwdafService
        from ..smf.service import Smf, SmfService, UeSessionBinding, http_release
        from ..upf.service import UpfService

        self.events = events
        self.model_json = model_json
        self.upf = UpfService(tick_interval=0.02, events=events)
        for p in ues:
            self.upf.upf.add_session(p.pdu_session_id, p.ue_ipv4_addr, Snssai(1))
        self.mlprov = MlProvisionService(workdir / "registry", events=events)
        self.nwdaf_args = dict(collection_period_s=collection_period, store_path=workdir / "store.jsonl",
                               events=events, tick_interval=0.02, threshold=threshold)
        self.nwdaf: Optional[NwdafService] = None
        self._NwdafService = NwdafService
        self.smf_parts = (Smf, SmfService, UeSessionBinding, http_release)
        self.ues = list(ues)
        self.smf_period = smf_period
        self.smf = None

    def start(self, timeout: float = 15.0) -> "InprocStack":
        Smf, SmfService, UeSessionBinding, http_release = self.smf_parts
        self.upf.start()
        self.mlprov.start()
        status, body = post(self.mlprov.base_uri + "/admin/models", self.model_json.encode(), timeout=5.0)
        if status != 201:
            raise ServiceStartupFailure(f"model registration failed: {status} {body[:200]!r}")
        self.nwdaf = self._NwdafService(upf_uri=self.upf.base_uri, ml_provision_uri=self.mlprov.base_uri,
                                        **self.nwdaf_args).start()
        smf = Smf([UeSessionBinding(p.ue_ipv4_addr, p.pdu_session_id) for p in self.ues],
                  http_release(self.upf.base_uri), events=self.events)
        self.smf = SmfService(smf, nwdaf_uri=self.nwdaf.base_uri, report_period_s=self.smf_period).start()
        _wait(lambda: self.nwdaf.sbi is not None and self.nwdaf.sbi.active.is_set(), timeout, "UPF subscription")
        _wait(lambda: self.nwdaf.model.inference_uri is not None, timeout, "model binding")
        _wait(self.smf.subscribed.is_set, timeout, "SMF subscription")
        return self

    @property
    def ingest_address(self) -> tuple[str, int]:
        return self.upf.ingest_address

    def report_origin_wall(self) -> float:
        """Wall time at which the UPF collection subscription's first window opened."""
        sub = self.upf.upf.subscription(self.nwdaf.sbi.subscription_id)
        return sub.created_wall

    def all_events(self) -> list[dict]:
        return self.events.events()

    def stop(self) -> None:
        for svc in (self.smf, self.nwdaf, self.mlprov, self.upf):
            if svc is not None:
                try:
                    svc.stop()
                except Exception:  # pragma: no cover - best effort teardown
                    pass


def _toml_value(v) -> str:
    return json.dumps(v)


def write_toml(path: Path, flat: dict, tables: Optional[dict] = None) -> None:
    lines = [f"{k} = {_toml_value(v)}" for k, v in flat.items() if v is not None]
    for name, rows in (tables or {}).items():
        for row in rows:
            lines.append(f"\n[[{name}]]")
            lines += [f"{k} = {_toml_value(v)}" for k, v in row.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class MultiprocStack:
    """Each function in its own Python process on localhost, configured through TOML files."""

    ROLES = ("upf", "mlprov", "nwdaf", "smf")

    def __init__(self, ues: Sequence[UeProfile], model_json: str, *, collection_period: int, smf_period: int,
                 workdir: Path, events: EventLog, threshold: float = 0.5) -> None:
        self.ues = list(ues)
        self.model_json = model_json
        self.workdir = Path(workdir)
        self.events = events
        self.ports = {r: free_port() for r in self.ROLES}
        self.ingest_port = free_port()
        self.uri = {r: f"http://127.0.0.1:{p}" for r, p in self.ports.items()}
        sessions = [{"pdu_session_id": p.pdu_session_id, "ue_ipv4_addr": p.ue_ipv4_addr} for p in self.ues]
        cfg = {
            "upf": ({"listen_addr": "127.0.0.1", "ee_port": self.ports["upf"], "ingest_port": self.ingest_port},
                    {"sessions": sessions}),
            "mlprov": ({"registry_dir": str(self.workdir / "registry"),
                        "listen_addr": f"127.0.0.1:{self.ports['mlprov']}"}, None),
            "nwdaf": ({"upf_uri": self.uri["upf"], "collection_period_s": collection_period,
                       "store_path": str(self.workdir / "store.jsonl"), "ml_provision_uri": self.uri["mlprov"],
                       "listen_addr": f"127.0.0.1:{self.ports['nwdaf']}", "threshold": threshold}, None),
            "smf": ({"nwdaf_uri": self.uri["nwdaf"], "upf_uri": self.uri["upf"], "report_period_s": smf_period,
                     "listen_addr": f"127.0.0.1:{self.ports['smf']}"}, {"sessions": sessions}),
        }
        self.configs = {}
        for role, (flat, tables) in cfg.items():
            path = self.workdir / f"{role}.toml"
            write_toml(path, flat, tables)
            self.configs[role] = path
        self.procs: dict[str, subprocess.Popen] = {}

    def _log(self, role: str) -> Path:
        return self.workdir / f"{role}.events.jsonl"

    def _spawn(self, role: str) -> None:
        env = dict(os.environ)
        src = str(Path(__file__).resolve().parents[2])
        env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
        self.procs[role] = subprocess.Popen(
            [sys.executable, "-m", "nwdaf_loop.harness.launch", role, "--config", str(self.configs[role]),
             "--events", str(self._log(role))],
            env=env, stdout=subprocess.DEVNULL, stderr=open(self.workdir / f"{role}.stderr", "w"))

    def _alive(self, role: str) -> bool:
        if self.procs[role].poll() is not None:
            raise ServiceStartupFailure(f"{role} exited with {self.procs[role].returncode}")
        try:
            request("GET", self.uri[role] + "/", timeout=0.2)
            return True
        except Unreachable:
            return False

    def _seen(self, role: str, kind: str) -> bool:
        p = self._log(role)
        return p.exists() and any(e["kind"] == kind for e in read_events([p]))

    def start(self, timeout: float = 20.0) -> "MultiprocStack":
        for role in ("upf", "mlprov"):
            self._spawn(role)
        for role in ("upf", "mlprov"):
            _wait(lambda: self._alive(role), timeout, f"{role} process")
        status, body = post(self.uri["mlprov"] + "/admin/models", self.model_json.encode(), timeout=5.0)
        if status != 201:
            raise ServiceStartupFailure(f"model registration failed: {status} {body[:200]!r}")
        self._spawn("nwdaf")
        _wait(lambda: self._alive("nwdaf"), timeout, "nwdaf process")
        self._spawn("smf")
        _wait(lambda: self._seen("nwdaf", "nwdaf_sbi_subscribed"), timeout, "UPF subscription")
        _wait(lambda: self._seen("nwdaf", "nwdaf_model_bound"), timeout, "model binding")
        _wait(lambda: self._seen("smf", "smf_subscribed"), timeout, "SMF subscription")
        return self

    @property
    def ingest_address(self) -> tuple[str, int]:
        return ("127.0.0.1", self.ingest_port)

    def report_origin_wall(self) -> float:
        subs = [e for e in read_events([self._log("upf")]) if e["kind"] == "upf_subscribed"]
        return subs[0]["windowStart"]

    def all_events(self) -> list[dict]:
        paths = [self._log(r) for r in self.ROLES if self._log(r).exists()]
        return sorted(read_events(paths) + self.events.events(), key=lambda e: e["t"])

    def stop(self) -> None:
        for p in self.procs.values():
            if p.poll() is None:
                p.terminate()
        for p in self.procs.values():
            try:
                p.wait(timeout=5)
            except subprocess.TimeoutExpired:
                p.kill()
