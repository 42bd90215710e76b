import json
import subprocess
import sys
import textwrap
import time
from types import SimpleNamespace
from datetime import timedelta
from pathlib import Path

import pytest

from nwdaf_loop.ees import codec
from nwdaf_loop.ees.model import (
    AnalyticsEventId,
    AnalyticsSubscription,
    ExceptionId,
    MeasurementType,
    Granularity,
    EventType,
)
from nwdaf_loop.engine.detect import DetectionResult, Detections, Label, NoModelAvailable
from nwdaf_loop.net import free_port, get_json, post, request
from nwdaf_loop.nwdaf import NwdafService, ReportStore, SbiClient, UnsupportedEventId
from nwdaf_loop.upf import UpfService

from .test_engine import note, T0

SAMPLE = Path(__file__).parent / "data" / "sample_notification.json"
DDOS = ExceptionId.SUSPICION_OF_DDOS_ATTACK


# -- store ---------------------------------------------------------------------------

def test_sample_notification_stored_and_queryable(tmp_path):
    store = ReportStore(tmp_path / "r.jsonl")
    n = codec.decode_notification(SAMPLE.read_bytes())
    assert store.append(n) is not None
    (r,) = store.query_reports(n.time_stamp - timedelta(seconds=1), n.time_stamp)
    assert r.notification == n
    assert store.query_reports(n.time_stamp, n.time_stamp, ue="10.42.0.2")[0].notification == n
    assert store.query_reports(n.time_stamp, n.time_stamp, ue="10.42.0.3") == []


def test_duplicate_delivery_stored_once():
    store = ReportStore()
    n = note("10.42.0.2", [("1.1.1.1", 1, 1)])
    assert store.append(n) is not None
    assert store.append(n) is None
    assert len(store) == 1


def test_query_window_order_and_filter():
    import random

    store = ReportStore()
    rng = random.Random(3)
    notes = [note(f"10.42.0.{rng.randint(1, 3)}", [("1.1.1.1", 1, 1)], t=T0 + timedelta(seconds=rng.randint(0, 50)),
                  sid=f"s{i}") for i in range(60)]
    for n in notes:
        store.append(n)
    lo, hi = T0 + timedelta(seconds=10), T0 + timedelta(seconds=30)
    got = store.query_reports(lo, hi, ue="10.42.0.2")
    expect = [n for n in notes if lo <= n.time_stamp <= hi and n.ue_ipv4_addr == "10.42.0.2"]
    assert sorted(map(id, (r.notification for r in got))) == sorted(map(id, expect))
    stamps = [r.notification.time_stamp for r in got]
    assert stamps == sorted(stamps)
    assert len(store.query_reports(T0 - timedelta(days=1), T0 + timedelta(days=1))) == 60
    assert store.query_reports(T0 - timedelta(days=2), T0 - timedelta(days=1)) == []
    with pytest.raises(ValueError):
        store.query_reports(hi, lo)


def test_received_at_monotone_per_source():
    ticks = iter([10.0, 5.0, 12.0])
    store = ReportStore(clock=lambda: next(ticks))
    for i in range(3):
        store.append(note("10.42.0.2", [("1.1.1.1", 1, 1)], sid=f"s{i}"), source="upf-a")
    got = [r.received_at for r in store.query_reports(0, 1e12)]
    assert got == [10.0, 10.0, 12.0]


def test_acknowledged_reports_survive_a_crash(tmp_path):
    path = tmp_path / "store.jsonl"
    script = textwrap.dedent(f"""
        import os, sys
        sys.path.insert(0, {str(Path(__file__).parent.parent)!r})
        from tests.test_engine import note
        from nwdaf_loop.nwdaf import ReportStore
        s = ReportStore({str(path)!r})
        for i in range(25):
            s.append(note("10.42.0.2", [("1.1.1.1", i + 1, 1)], sid=f"s{{i}}"))
        s._fh.write('{{"receivedAt": 1, "notif')  # half-written record, never acknowledged
        s._fh.flush()
        os._exit(9)
    """)
    r = subprocess.run([sys.executable, "-c", script])
    assert r.returncode == 9
    again = ReportStore(path)
    assert len(again) == 25
    assert again.append(note("10.42.0.2", [("1.1.1.1", 1, 1)], sid="s0")) is None
    assert again.append(note("10.42.0.2", [("1.1.1.1", 1, 1)], sid="new")) is not None
    assert len(ReportStore(path)) == 26


# -- SBI client ----------------------------------------------------------------------

def test_sbi_subscription_shape():
    upf = UpfService(ingest_port=None).start()
    try:
        for period in (1, 3):
            c = SbiClient(upf.base_uri, period, "http://127.0.0.1:9/sbi/notify").start()
            assert c.active.wait(5)
            acc = upf.upf.subscription(c.subscription_id).response.accepted
            assert acc.reporting.period_seconds == period
            assert acc.granularity is Granularity.PER_FLOW
            assert acc.event_types == {EventType.USER_DATA_USAGE_MEASURES}
            assert acc.measurement_types == {MeasurementType.VOLUME_MEASUREMENT, MeasurementType.THROUGHPUT_MEASUREMENT}
            c.stop()
        assert upf.upf.subscription_ids == []
    finally:
        upf.stop()


def test_sbi_retries_until_upf_appears():
    port = free_port()
    c = SbiClient(f"http://127.0.0.1:{port}", 1, "http://127.0.0.1:9/x", initial_backoff=0.05, backoff_cap=0.2).start()
    time.sleep(0.6)
    assert c.state == "retrying" and c.attempts >= 3
    assert max(c.delays) <= 0.2
    upf = UpfService(ee_port=port, ingest_port=None).start()
    try:
        assert c.active.wait(5)
        assert c.state == "active"
    finally:
        c.stop()
        upf.stop()


def test_backoff_is_capped_at_thirty_seconds():
    c = SbiClient("http://127.0.0.1:9", 1, "http://127.0.0.1:9/x")
    assert c.backoff_cap == 30.0


# -- NBI dispatch --------------------------------------------------------------------

def fake_engine(results=(), error=None, fail=False):
    calls = []

    def engine(window, uri, source, threshold=0.5):
        calls.append(window)
        if fail:
            raise NoModelAvailable("none")
        return Detections([DetectionResult(ue, lab, c, DDOS, window) for ue, lab, c in results], error=error)

    engine.calls = calls
    return engine


class Clock:
    def __init__(self):
        self.t = 100.0

    def __call__(self):
        return self.t


def nwdaf_with(engine, clock=None):
    return NwdafService(engine=engine, clock=clock or Clock())


def sub(period=1, exceptions=None):
    return AnalyticsSubscription(AnalyticsEventId.ABNORMAL_BEHAVIOUR, "http://127.0.0.1:9/smf/notify", period,
                                 exceptions)


def test_negative_report_when_nothing_flagged():
    clock = Clock()
    nw = nwdaf_with(fake_engine([("10.42.0.2", Label.BENIGN, 0.1)]), clock)
    nw.handle_analytics_subscribe(sub())
    assert nw.nbi_dispatch_tick() == []
    clock.t += 1
    ((uri, n),) = nw.nbi_dispatch_tick()
    assert uri.endswith("/smf/notify") and n.exceptions == ()


def test_flagged_ue_reported():
    clock = Clock()
    nw = nwdaf_with(fake_engine([("10.42.0.2", Label.ANOMALOUS, 0.93), ("10.42.0.3", Label.BENIGN, 0.2)]), clock)
    nw.handle_analytics_subscribe(sub())
    clock.t += 1
    ((_, n),) = nw.nbi_dispatch_tick()
    (e,) = n.exceptions
    assert e.excep_id is DDOS and e.ue_ipv4_addrs == ("10.42.0.2",) and e.confidences == (0.93,)


def test_exception_filter_respected():
    clock = Clock()
    nw = nwdaf_with(fake_engine([("10.42.0.2", Label.ANOMALOUS, 0.9)]), clock)
    nw.handle_analytics_subscribe(sub(exceptions={ExceptionId.UNEXPECTED_UE_LOCATION}))
    nw.handle_analytics_subscribe(sub(exceptions={DDOS}))
    clock.t += 1
    out = nw.nbi_dispatch_tick()
    assert sorted(len(n.exceptions) for _, n in out) == [0, 1]


def test_engine_failure_skips_and_counts():
    clock = Clock()
    nw = nwdaf_with(fake_engine(fail=True), clock)
    nw.handle_analytics_subscribe(sub())
    clock.t += 1
    assert nw.nbi_dispatch_tick() == [] and nw.engine_errors == 1
    nw.engine = fake_engine(error="unreachable")
    clock.t += 1
    assert nw.nbi_dispatch_tick() == [] and nw.engine_errors == 2


def test_cadence_follows_period():
    clock = Clock()
    nw = nwdaf_with(fake_engine(), clock)
    nw.handle_analytics_subscribe(sub(period=3))
    fired = []
    for _ in range(200):
        clock.t += 0.1
        if nw.nbi_dispatch_tick():
            fired.append(clock.t)
    gaps = [b - a for a, b in zip(fired, fired[1:])]
    assert len(fired) == 6 and all(abs(g - 3) <= 0.5 for g in gaps)


def test_unsupported_event_id():
    nw = nwdaf_with(fake_engine())
    with pytest.raises(UnsupportedEventId):
        nw.handle_analytics_subscribe(SimpleNamespace(event_id="OTHER", notify_uri="http://a/b", period_seconds=1))


# -- HTTP surface --------------------------------------------------------------------

@pytest.fixture
def live():
    nw = NwdafService(engine=fake_engine([("10.42.0.2", Label.ANOMALOUS, 0.8)]), tick_interval=0.02)
    nw.start()
    nw.model.inference_uri = "http://unused"
    yield nw
    nw.stop()


def test_sbi_notify_endpoint(live):
    body = SAMPLE.read_bytes()
    assert post(live.base_uri + "/sbi/notify", body)[0] == 204
    assert post(live.base_uri + "/sbi/notify", body)[0] == 204
    assert post(live.base_uri + "/sbi/notify", b'{"eventType": 1}')[0] == 400
    assert len(live.store) == 1 and live.duplicates == 1 and live.rejected_reports == 1


def test_consumer_subscription_and_delivery(live, receiver):
    doc = {"eventId": "ABNORMAL_BEHAVIOUR", "notifyUri": receiver.uri, "periodSeconds": 1}
    status, body = post(live.base_uri + "/nnwdaf-eventssubscription/v1/subscriptions", doc)
    assert status == 201
    sid = json.loads(body)["subscriptionId"]
    assert receiver.wait_for(2, timeout=5)
    n = codec.decode_abnormal_notification(receiver.bodies[0])
    assert n.subscription_id == sid and set(n.flagged_ues()) == {"10.42.0.2"}
    assert request("DELETE", f"{live.base_uri}/nnwdaf-eventssubscription/v1/subscriptions/{sid}")[0] == 204
    assert request("DELETE", f"{live.base_uri}/nnwdaf-eventssubscription/v1/subscriptions/{sid}")[0] == 404


def test_bad_event_id_rejected(live):
    doc = {"eventId": "NOT_AN_EVENT", "notifyUri": "http://a/b", "periodSeconds": 1}
    status, body = post(live.base_uri + "/nnwdaf-eventssubscription/v1/subscriptions", doc)
    assert status == 400 and b"UnsupportedEventId" in body


def test_one_shot_analytics(live):
    doc = get_json(live.base_uri + "/nnwdaf-analyticsinfo/v1/analytics?event-id=ABNORMAL_BEHAVIOUR")
    assert doc["exceptions"][0]["ueIpv4Addrs"] == ["10.42.0.2"]
    assert request("GET", live.base_uri + "/nnwdaf-analyticsinfo/v1/analytics?event-id=X")[0] == 400


def test_model_binding_via_notify(live):
    assert post(live.base_uri + "/mlprov/notify", {"inferenceUri": "http://m/bot-rf/2:infer",
                                                   "model": {"name": "bot-rf", "version": 2}})[0] == 204
    assert live.model.version == 2 and live.model.inference_uri.endswith("2:infer")
