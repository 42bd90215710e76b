import threading
import time

import pytest

from nwdaf_loop.ees.model import (
    EesSubscriptionRequest,
    EventFilters,
    EventType,
    Granularity,
    MeasurementType,
    ReportingMode,
)
from nwdaf_loop.net import JsonServer

SEC = 1_000_000_000


class FakeClock:
    def __init__(self, ns: int = 1_000 * SEC, wall: float = 1_743_098_459.0):
        self.ns = ns
        self.wall0 = wall
        self.ns0 = ns

    def __call__(self) -> int:
        return self.ns

    def wall(self) -> float:
        return self.wall0 + (self.ns - self.ns0) / SEC

    def advance(self, seconds: float) -> None:
        self.ns += int(seconds * SEC)


@pytest.fixture
def clock():
    return FakeClock()


def ees_request(period=3, granularity=Granularity.PER_FLOW, events=(EventType.USER_DATA_USAGE_MEASURES,),
                measurements=(MeasurementType.VOLUME_MEASUREMENT,), uri="http://127.0.0.1:1/sbi/notify",
                max_reports=None, filters=None):
    return EesSubscriptionRequest(frozenset(events), frozenset(measurements), granularity,
                                  ReportingMode(period, max_reports), uri, filters)


class Receiver:
    """Local HTTP sink recording POSTed bodies."""

    def __init__(self, path="/notify", status=204):
        self.bodies = []
        self.times = []
        self.cond = threading.Condition()
        self.status = status
        self.server = JsonServer(name="receiver")

        @self.server.route("POST", path)
        def _recv(m, body, q):
            with self.cond:
                self.bodies.append(body)
                self.times.append(time.monotonic())
                self.cond.notify_all()
            return self.status, None

        self.server.start()
        self.uri = self.server.base_uri + path

    def wait_for(self, n, timeout=10.0):
        with self.cond:
            return self.cond.wait_for(lambda: len(self.bodies) >= n, timeout)


@pytest.fixture
def receiver():
    r = Receiver()
    yield r
    r.server.stop()


# -- acceptance summary ----------------------------------------------------------------

ACCEPTANCE: dict = {}


def record_criterion(num: int, name: str, passed: bool, detail: str = "") -> str:
    line = f"criterion {num} {name}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[num] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
