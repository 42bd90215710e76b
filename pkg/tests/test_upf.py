import json
import random
import socket
import time

import pytest
from hypothesis import given, settings, strategies as st

from nwdaf_loop.ees import codec
from nwdaf_loop.ees.model import (
    EventFilters,
    EventType,
    FlowKey,
    Granularity,
    MeasurementType,
    Snssai,
)
from nwdaf_loop.net import post, recv_frame, request, send_frame
from nwdaf_loop.upf.core import AllEventsUnsupported, UnknownSession, UnknownSubscription, Upf
from nwdaf_loop.upf.measure import AggregateRecord, compute_measurements, merge_records, parse_pack_filt_id
from nwdaf_loop.upf.packets import (
    DOWNLINK,
    UPLINK,
    ForwardDecision,
    MalformedDescriptor,
    PacketDescriptor,
    PacketKind,
)
from nwdaf_loop.upf.service import EE_BASE, UpfService

from .conftest import SEC, ees_request

UE = "10.42.0.2"
SRV = "142.250.64.78"
ALL_MEAS = (MeasurementType.VOLUME_MEASUREMENT, MeasurementType.THROUGHPUT_MEASUREMENT)


def up(size, ue=UE, dst=SRV, sport=40000, dport=443, sid=1, kind=PacketKind.DATA):
    return PacketDescriptor(FlowKey(ue, dst, sport, dport), sid, ue, size, UPLINK, kind)


def down(size, ue=UE, src=SRV, sport=443, dport=40000, sid=1):
    return PacketDescriptor(FlowKey(src, ue, sport, dport), sid, ue, size, DOWNLINK)


def make_upf(clock, **kw):
    upf = Upf(clock=clock, wall_clock=clock.wall, **kw)
    upf.add_session(1, UE, Snssai(2, "000002"))
    return upf


# -- compute_measurements ----------------------------------------------------

def test_volume_and_throughput_over_ten_seconds():
    rec = AggregateRecord(12)
    rec.add(0, True, 600)
    rec.add(0, False, 400)
    item = compute_measurements(rec, 10.0, Granularity.PER_FLOW, ALL_MEAS, (UE, SRV, 1, 2))
    assert item.volume.total_volume == 1000
    assert item.throughput.ul_throughput == 60.0
    assert item.throughput.dl_throughput == 40.0
    assert json.loads(item.flow_info.pack_filt_id)["SrcIp"] == UE


def test_statistics_from_buckets():
    rec = AggregateRecord(5)
    for sec, b in enumerate([100, 300, 200]):
        rec.add(sec, False, b)
    s = compute_measurements(rec, 3.0, Granularity.PER_SESSION, [MeasurementType.THROUGHPUT_MEASUREMENT]).throughput_statistics
    assert s.dl_average == 200
    assert s.dl_peak == 300
    assert s.ul_average == 0 and s.ul_peak == 0


def test_per_session_is_fieldwise_sum():
    a, b = AggregateRecord(), AggregateRecord()
    for _ in range(10):
        a.add(0, True, 1)
    for _ in range(5):
        b.add(0, True, 1)
    for _ in range(7):
        b.add(1, False, 1)
    item = compute_measurements(merge_records([a, b]), 3.0, Granularity.PER_SESSION, [MeasurementType.VOLUME_MEASUREMENT])
    v = item.volume
    assert (v.ul_volume, v.dl_volume, v.total_volume) == (15, 7, 22)
    assert item.flow_info is None and item.throughput is None


def test_only_requested_measurements_populated():
    rec = AggregateRecord()
    rec.add(0, True, 5)
    item = compute_measurements(rec, 1.0, Granularity.PER_SESSION, [MeasurementType.THROUGHPUT_MEASUREMENT])
    assert item.volume is None and item.throughput is not None


def test_window_must_be_positive():
    with pytest.raises(ValueError):
        compute_measurements(AggregateRecord(), 0, Granularity.PER_SESSION, ALL_MEAS)


# -- server module -----------------------------------------------------------

def test_subscribe_accepts_three_second_per_flow_volume(clock):
    upf = make_upf(clock)
    req = ees_request(period=3)
    resp = upf.handle_subscribe(req)
    assert resp.accepted == req
    assert resp.subscription_id


def test_unsupported_events_omitted(clock):
    upf = make_upf(clock, supported_events=[EventType.USER_DATA_USAGE_MEASURES])
    req = ees_request(events=(EventType.USER_DATA_USAGE_MEASURES, EventType.USER_DATA_USAGE_TRENDS))
    resp = upf.handle_subscribe(req)
    assert resp.accepted.event_types == {EventType.USER_DATA_USAGE_MEASURES}
    assert resp.accepted.event_types <= req.event_types


def test_all_unsupported_rejected(clock):
    upf = make_upf(clock, supported_events=[EventType.USER_DATA_USAGE_MEASURES])
    with pytest.raises(AllEventsUnsupported):
        upf.handle_subscribe(ees_request(events=(EventType.USER_DATA_USAGE_TRENDS,)))
    assert upf.subscription_ids == []


def test_identical_requests_get_distinct_ids(clock):
    upf = make_upf(clock)
    ids = {upf.handle_subscribe(ees_request()).subscription_id for _ in range(50)}
    assert len(ids) == 50


def test_unsubscribe_freezes_counters(clock):
    upf = make_upf(clock)
    sid = upf.handle_subscribe(ees_request(period=1)).subscription_id
    upf.ingest_packet(up(100))
    upf.handle_unsubscribe(sid)
    upf.ingest_packet(up(100))
    clock.advance(2)
    assert upf.notifier_tick() == []
    assert upf.aggregate_count() == 0


def test_unsubscribe_unknown(clock):
    with pytest.raises(UnknownSubscription):
        make_upf(clock).handle_unsubscribe("nope")


def test_resubscribe_starts_from_zero(clock):
    upf = make_upf(clock)
    sid = upf.handle_subscribe(ees_request(period=1)).subscription_id
    upf.ingest_packet(up(100))
    upf.handle_unsubscribe(sid)
    sid2 = upf.handle_subscribe(ees_request(period=1)).subscription_id
    assert sid2 != sid
    upf.ingest_packet(up(7))
    clock.advance(1)
    (_, n), = upf.notifier_tick()
    assert n.items[0].volume.total_volume == 7


# -- data preparation ----------------------------------------------------------

def test_ingest_updates_one_record(clock):
    upf = make_upf(clock)
    sid = upf.handle_subscribe(ees_request()).subscription_id
    assert upf.ingest_packet(up(600)) is ForwardDecision.FORWARDED
    assert upf.ingest_packet(down(400)) is ForwardDecision.FORWARDED
    (rec,) = upf.subscription(sid).records.values()
    assert (rec.ul_bytes, rec.dl_bytes, rec.ul_packets, rec.dl_packets) == (600, 400, 1, 1)


def test_released_session_drops_without_counting(clock):
    upf = make_upf(clock)
    sid = upf.handle_subscribe(ees_request()).subscription_id
    upf.ingest_packet(up(600))
    upf.release_pdu_session(1)
    assert upf.ingest_packet(up(600)) is ForwardDecision.DROPPED_RELEASED
    assert upf.ingest_packet(up(1, kind=PacketKind.PROBE)) is ForwardDecision.DROPPED_RELEASED
    (rec,) = upf.subscription(sid).records.values()
    assert rec.ul_bytes == 600
    assert upf.session(1).forwarded_packets == 1


def test_zero_subscribers_allocate_nothing(clock):
    upf = make_upf(clock)
    pkts = [up(100, sport=1000 + i % 500) for i in range(10**5)]
    assert all(d is ForwardDecision.FORWARDED for d in upf.ingest_batch(pkts))
    assert upf.aggregate_count() == 0


def test_unknown_session_dropped(clock):
    upf = make_upf(clock)
    assert upf.ingest_packet(up(10, sid=99)) is ForwardDecision.DROPPED_NO_SESSION


def test_baseline_has_no_hook(clock):
    upf = make_upf(clock, ees_enabled=False)
    upf.handle_subscribe(ees_request())
    upf.ingest_packet(up(10))
    assert upf.aggregate_count() == 0


def test_multiple_subscriptions_counted_independently(clock):
    upf = make_upf(clock)
    a = upf.handle_subscribe(ees_request()).subscription_id
    b = upf.handle_subscribe(ees_request()).subscription_id
    upf.ingest_packet(up(5))
    assert [r.ul_bytes for r in upf.subscription(a).records.values()] == [5]
    assert [r.ul_bytes for r in upf.subscription(b).records.values()] == [5]


def test_filters_are_conjunctive(clock):
    upf = make_upf(clock)
    upf.add_session(2, "10.42.0.3", Snssai(1))
    f_ue = upf.handle_subscribe(ees_request(filters=EventFilters(ue_ipv4_addr="10.42.0.3"))).subscription_id
    f_slice = upf.handle_subscribe(ees_request(filters=EventFilters(snssai=Snssai(2)))).subscription_id
    f_both = upf.handle_subscribe(ees_request(filters=EventFilters(snssai=Snssai(2), ue_ipv4_addr="10.42.0.3"))).subscription_id
    upf.ingest_packet(up(10))
    upf.ingest_packet(up(20, ue="10.42.0.3", sid=2))
    total = lambda s: sum(r.ul_bytes for r in upf.subscription(s).records.values())
    assert (total(f_ue), total(f_slice), total(f_both)) == (20, 10, 0)


def test_descriptor_validation():
    with pytest.raises(MalformedDescriptor):
        PacketDescriptor(FlowKey("10.0.0.9", SRV, 1, 2), 1, UE, 10, UPLINK).validate()
    with pytest.raises(MalformedDescriptor):
        up(0).validate()
    with pytest.raises(MalformedDescriptor):
        PacketDescriptor.from_dict({"flow": {}, "pduSessionId": 1})
    p = up(10)
    assert PacketDescriptor.from_dict(p.to_dict()) == p


# -- client module -------------------------------------------------------------

def test_reports_every_period(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=3))
    upf.ingest_packet(up(600))
    clock.advance(2.9)
    assert upf.notifier_tick() == []
    clock.advance(0.1)
    (uri, n), = upf.notifier_tick()
    assert uri == "http://127.0.0.1:1/sbi/notify"
    assert n.items[0].volume.ul_volume == 600
    assert (n.time_stamp - n.start_time).total_seconds() == pytest.approx(3.0)
    assert parse_pack_filt_id(n.items[0].flow_info.pack_filt_id)[:2] == (UE, SRV)


def test_idle_window_emits_heartbeat(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=1))
    clock.advance(1)
    (_, n), = upf.notifier_tick()
    assert n.items == ()


def test_max_reports_then_auto_unsubscribe(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=1, max_reports=2))
    sent = []
    for _ in range(6):
        upf.ingest_packet(up(1))
        clock.advance(1)
        sent += upf.notifier_tick()
    assert len(sent) == 2
    assert upf.subscription_ids == []


def test_schedule_does_not_drift(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=3))
    emitted = []
    for _ in range(600):  # 60 s at 100 ms cadence, each tick 3 ms late
        clock.advance(0.1)
        if upf.notifier_tick():
            emitted.append(clock.ns)
        clock.advance(0.003)
    gaps = [(b - a) / SEC for a, b in zip(emitted, emitted[1:])]
    assert len(emitted) >= 19
    assert all(2.7 <= g <= 3.3 for g in gaps)


def test_per_session_notification(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=1, granularity=Granularity.PER_SESSION))
    upf.ingest_packet(up(10, dport=80))
    upf.ingest_packet(up(5, dport=81))
    upf.ingest_packet(down(7, sport=81))
    clock.advance(1)
    (_, n), = upf.notifier_tick()
    (item,) = n.items
    assert item.flow_info is None
    assert (item.volume.ul_volume, item.volume.dl_volume) == (15, 7)


def test_trends_report_statistics_only(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=1, events=(EventType.USER_DATA_USAGE_TRENDS,)))
    peaks = []
    for b in (100, 300, 200, 0):
        if b:
            upf.ingest_packet(up(b))
        clock.advance(1)
        (_, n), = upf.notifier_tick()
        assert n.event_type is EventType.USER_DATA_USAGE_TRENDS
        if n.items:
            item = n.items[0]
            assert item.volume is None and item.throughput is None
            peaks.append((item.throughput_statistics.ul_average, item.throughput_statistics.ul_peak))
    # sliding three-window statistics: [100], [100,300], [100,300,200], [300,200,0]
    assert peaks[:3] == [(100, 100), (200, 300), (200, 300)]


def test_released_session_reports_residual_then_stops(clock):
    upf = make_upf(clock)
    upf.handle_subscribe(ees_request(period=1))
    upf.ingest_packet(up(10))
    upf.release_pdu_session(1)
    clock.advance(1)
    (_, n), = upf.notifier_tick()
    assert n.items[0].volume.ul_volume == 10
    clock.advance(1)
    assert upf.notifier_tick() == []


# -- release -------------------------------------------------------------------

def test_release_is_idempotent(clock):
    upf = make_upf(clock)
    assert upf.release_pdu_session(1)["alreadyReleased"] is False
    assert upf.release_pdu_session(1)["alreadyReleased"] is True
    assert upf.session(1).released_at is not None


def test_release_unknown(clock):
    with pytest.raises(UnknownSession):
        make_upf(clock).release_pdu_session(42)


def test_released_session_cannot_be_reestablished(clock):
    upf = make_upf(clock)
    upf.release_pdu_session(1)
    with pytest.raises(Exception):
        upf.add_session(1, UE)


# -- properties ------------------------------------------------------------------

packet_plans = st.lists(
    st.tuples(
        st.integers(1, 3),           # session
        st.integers(0, 4),           # remote host
        st.booleans(),               # uplink?
        st.integers(1, 1500),        # size
        st.floats(0, 1.5),           # time step before packet
    ),
    max_size=300,
)


@settings(max_examples=60, deadline=None)
@given(packet_plans, st.integers(1, 3), st.integers(0, 10))
def test_conservation_and_granularity_consistency(plan, period, release_at):
    from .conftest import FakeClock

    clock = FakeClock()
    upf = Upf(clock=clock, wall_clock=clock.wall)
    for s in (1, 2, 3):
        upf.add_session(s, f"10.42.0.{s}")
    flow_sub = upf.handle_subscribe(ees_request(period=period, measurements=ALL_MEAS)).subscription_id
    sess_sub = upf.handle_subscribe(ees_request(period=period, granularity=Granularity.PER_SESSION)).subscription_id
    reports = []
    for i, (s, host, is_up, size, dt) in enumerate(plan):
        if i == release_at:
            upf.release_pdu_session(2)
        clock.advance(dt)
        reports += upf.notifier_tick()
        ue = f"10.42.0.{s}"
        p = up(size, ue=ue, dst=f"8.8.{host}.1", sid=s) if is_up else down(size, ue=ue, src=f"8.8.{host}.1", sid=s)
        upf.ingest_packet(p)
    clock.advance(period)
    reports += upf.notifier_tick()

    flow_total = sum(i.volume.total_volume for _, n in reports if n.subscription_id == flow_sub for i in n.items)
    forwarded = sum(sess.forwarded_bytes for sess in upf.sessions())
    assert flow_total == forwarded

    # per window and session: PER_SESSION == sum of PER_FLOW
    flow_sums, sess_sums = {}, {}
    for _, n in reports:
        key = (n.time_stamp, n.ue_ipv4_addr)
        for i in n.items:
            target = flow_sums if n.subscription_id == flow_sub else sess_sums
            ul, dl = target.get(key, (0, 0))
            target[key] = (ul + i.volume.ul_volume, dl + i.volume.dl_volume)
    assert flow_sums == sess_sums


# -- network surface ---------------------------------------------------------------

@pytest.fixture
def svc():
    s = UpfService(tick_interval=0.02).start()
    s.upf.add_session(1, UE, Snssai(2, "000002"))
    yield s
    s.stop()


def test_http_subscribe_and_notification_delivery(svc, receiver):
    body = codec.encode_subscription_request(ees_request(period=1, uri=receiver.uri, measurements=ALL_MEAS))
    status, data = post(svc.base_uri + EE_BASE, body)
    assert status == 201
    resp = codec.decode_subscription_response(data)
    svc.upf.ingest_packet(up(600))
    svc.upf.ingest_packet(down(400))
    assert receiver.wait_for(1, timeout=5)
    n = codec.decode_notification(receiver.bodies[0])
    assert n.subscription_id == resp.subscription_id
    assert n.items[0].volume.total_volume == 1000
    status, _ = request("DELETE", f"{svc.base_uri}{EE_BASE}/{resp.subscription_id}")
    assert status == 204
    status, _ = request("DELETE", f"{svc.base_uri}{EE_BASE}/{resp.subscription_id}")
    assert status == 404


def test_http_rejects_bad_bodies(svc):
    assert post(svc.base_uri + EE_BASE, b"{")[0] == 400
    assert post(svc.base_uri + EE_BASE, json.dumps({"eventTypes": ["NOPE"]}).encode())[0] == 400


def test_http_release(svc):
    status, data = post(svc.base_uri + "/n4/v1/sessions/1/release")
    assert status == 200 and json.loads(data)["alreadyReleased"] is False
    assert json.loads(post(svc.base_uri + "/n4/v1/sessions/1/release")[1])["alreadyReleased"] is True
    assert post(svc.base_uri + "/n4/v1/sessions/77/release")[0] == 404


def test_failed_delivery_retried_once(svc):
    calls = []

    def flaky(uri, payload):
        calls.append(uri)
        raise ConnectionError("down")

    svc.pump.deliver = flaky
    svc.upf.handle_subscribe(ees_request(period=1, max_reports=1))
    deadline = time.time() + 3
    while time.time() < deadline and len(calls) < 2:
        time.sleep(0.05)
    time.sleep(0.3)
    assert len(calls) == 2
    assert svc.pump.dropped == 1


def test_tcp_ingest_and_probe_echo(svc):
    host, port = svc.ingest_address
    with socket.create_connection((host, port), timeout=2) as sock:
        send_frame(sock, [up(100).to_dict(), down(50).to_dict()])
        send_frame(sock, up(1, kind=PacketKind.PROBE).to_dict())
        echo = json.loads(recv_frame(sock))
        assert echo["echo"] is True
        send_frame(sock, {"garbage": True})
        svc.upf.release_pdu_session(1)
        send_frame(sock, up(1, kind=PacketKind.PROBE).to_dict())
        sock.settimeout(0.5)
        with pytest.raises(socket.timeout):
            recv_frame(sock)
    assert svc.upf.session(1).forwarded_bytes == 151
    assert svc.malformed == 1
