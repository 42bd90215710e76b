"""Append-only usage-report store: JSONL on disk, time index in memory."""

from __future__ import annotations

import bisect
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional

from ..ees.codec import notification_from_dict, notification_to_dict
from ..ees.model import CodecError, EesNotification

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StoredUsageReport:
    received_at: float  # epoch seconds
    notification: EesNotification
    source_upf: str

    @property
    def time_stamp(self) -> float:
        return self.notification.time_stamp.timestamp()


def _epoch(t: float | datetime) -> float:
    return t.timestamp() if isinstance(t, datetime) else float(t)


class ReportStore:
    """One writer, many readers. A report is on disk (fsync'd) before ``append`` returns."""

    def __init__(self, path: Optional[str | Path] = None, *, fsync: bool = True,
                 clock: Callable[[], float] = time.time,
                 on_append: Optional[Callable[[StoredUsageReport], None]] = None) -> None:
        self.path = Path(path) if path else None
        self.fsync = fsync
        self.clock = clock
        self.on_append = on_append
        self._lock = threading.Lock()
        self._reports: list[StoredUsageReport] = []
        self._index: list[tuple[float, int]] = []  # (timeStamp, position), sorted
        self._keys: set[tuple] = set()
        self._last_received: dict[str, float] = {}
        self._fh = None
        if self.path is not None:
            self._replay()
            self._fh = open(self.path, "a", encoding="utf-8")

    @staticmethod
    def dedup_key(n: EesNotification) -> tuple:
        return (n.subscription_id, n.time_stamp, n.ue_ipv4_addr)

    def _replay(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.readlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                r = StoredUsageReport(float(d["receivedAt"]), notification_from_dict(d["notification"]), d["sourceUpf"])
            except (ValueError, KeyError, CodecError) as exc:
                # a torn tail is what an interrupted write leaves behind; it was never acknowledged
                log.warning("%s:%d unreadable record skipped (%s)", self.path, i + 1, exc)
                continue
            self._insert(r)
        if lines and not lines[-1].endswith("\n"):
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\n")

    def _insert(self, r: StoredUsageReport) -> None:
        self._keys.add(self.dedup_key(r.notification))
        self._last_received[r.source_upf] = r.received_at
        self._reports.append(r)
        bisect.insort(self._index, (r.time_stamp, len(self._reports) - 1))

    def append(self, n: EesNotification, source: str = "upf") -> Optional[StoredUsageReport]:
        """Store ``n``; returns None for a duplicate delivery."""
        with self._lock:
            if self.dedup_key(n) in self._keys:
                return None
            received = max(self.clock(), self._last_received.get(source, 0.0))
            r = StoredUsageReport(received, n, source)
            if self._fh is not None:
                line = json.dumps({"receivedAt": received, "sourceUpf": source,
                                   "notification": notification_to_dict(n)}, separators=(",", ":"))
                self._fh.write(line + "\n")
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            self._insert(r)
        if self.on_append is not None:
            self.on_append(r)
        return r

    def query_reports(self, start: float | datetime, end: float | datetime,
                      ue: Optional[str] = None) -> list[StoredUsageReport]:
        """Reports with start <= timeStamp <= end, optionally for one UE, ordered by timeStamp."""
        lo, hi = _epoch(start), _epoch(end)
        if lo > hi:
            raise ValueError("window start after end")
        with self._lock:
            a = bisect.bisect_left(self._index, (lo, -1))
            b = bisect.bisect_right(self._index, (hi, len(self._reports)))
            hits = [self._reports[i] for _, i in self._index[a:b]]
        return [r for r in hits if ue is None or r.notification.ue_ipv4_addr == ue]

    def __len__(self) -> int:
        return len(self._reports)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None
