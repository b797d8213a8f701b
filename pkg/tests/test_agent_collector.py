import socket
import threading
import time

import numpy as np
import pytest
from pyasn1.codec.ber import encoder

from ipsense.agent import MockAgent, default_oid_map, q_factor_db, serve_mock_agent
from ipsense.channel import ChannelParams
from ipsense.clock import ScaledClock
from ipsense.collector import PollTarget, parse_address, poll_once, run_collector
from ipsense.errors import DecodeError, InvalidArgument
from ipsense.samples import TraceWriter, load_trace
from ipsense.simulator import LiveLink, StressEvent, StressSchedule
from ipsense.snmp import (DEFAULT_CATALOG, V2C, DecodeSpec, decode_message, decode_value,
                          encode_ber, encode_oss, encode_response, response_varbinds)


def link_with(*events, total=3600.0, seed=0):
    return LiveLink(StressSchedule(tuple(events), total), seed=seed, link_id="lab")


def target_for(agent, link_id="lab", **kw):
    host, port = agent.address
    kw.setdefault("oids", DEFAULT_CATALOG.poll_map())
    return PollTarget(f"{host}:{port}", link_id, **kw)


@pytest.fixture
def quiet_agent():
    with MockAgent(link_with()) as agent:
        yield agent


def test_wire_encodings():
    assert encode_oss(-8.12) == -812
    assert encode_oss(None) == -9999
    assert encode_ber(4.12e-9) == "4.120000E-09"
    assert encode_ber(None) == ""
    assert decode_value("1.2", V2C.Integer32(-812), DecodeSpec("int", 0.01)) == pytest.approx(-8.12)
    assert decode_value("1.2", V2C.OctetString("4.120000E-09"), DecodeSpec()) == 4.12e-9
    assert decode_value("1.2", V2C.OctetString(""), DecodeSpec()) is None
    assert decode_value("1.2", V2C.Counter64(2 ** 40), DecodeSpec("int")) == 2 ** 40
    for bad in (V2C.OctetString("abc"), V2C.OctetString("nan"), V2C.NoSuchObject("")):
        with pytest.raises(DecodeError, match="1.2"):
            decode_value("1.2", bad, DecodeSpec())


def test_q_factor_string():
    assert q_factor_db(None) == ""
    assert float(q_factor_db(1e-3)) == pytest.approx(20 * np.log10(3.0902), abs=0.01)


def test_baseline_get(quiet_agent):
    s = poll_once(target_for(quiet_agent), timeout=1.0)
    p = ChannelParams()
    assert not s.transport_error and not s.loss_of_signal
    assert abs(s.oss - p.baseline_oss) <= 5 * p.oss_noise_std + 0.01
    assert 0 < s.ber < 20 * p.baseline_ber
    assert s.link_id == "lab"
    assert s.poll_latency_ms >= 0
    assert abs(s.timestamp_ms - time.time() * 1000) < 5000


def test_get_matches_link_state(quiet_agent):
    s = poll_once(target_for(quiet_agent), timeout=1.0)
    truth = quiet_agent.link.samples[: int(quiet_agent.elapsed()) + 2]
    assert any(abs(t.oss - s.oss) <= 0.005 and f"{t.ber:.6E}" == f"{s.ber:.6E}" for t in truth)


def test_one_cm_bend_raises_ber_hundredfold():
    clock = ScaledClock(speed=50)
    link = link_with(StressEvent("bend", 1.0, 0.0, 3000.0))
    with MockAgent(link, clock=clock) as agent:
        bers = []
        for _ in range(10):
            bers.append(poll_once(target_for(agent), clock, timeout=1.0).ber)
            clock.wait(1.2)
    ratio = np.mean(bers) / ChannelParams().baseline_ber
    assert 50 <= ratio <= 200


def test_half_cm_bend_gives_loss_sample():
    with MockAgent(link_with(StressEvent("bend", 0.5, 0.0, 600.0))) as agent:
        s = poll_once(target_for(agent), timeout=1.0)
    assert s.loss_of_signal and s.ber is None and s.oss is None


def test_extras_collected(quiet_agent):
    oids = DEFAULT_CATALOG.poll_map(["corrected_bits", "q_factor"])
    s = poll_once(target_for(quiet_agent, oids=oids), timeout=1.0)
    assert isinstance(s.extras["corrected_bits"], int)
    assert s.extras["q_factor"] > 0


def test_unknown_oid_is_no_such_object(quiet_agent):
    oids = {"oss": DEFAULT_CATALOG.oss, "ber": "1.3.6.1.4.1.32473.1.99.0"}
    with pytest.raises(DecodeError) as info:
        poll_once(target_for(quiet_agent, oids=oids), timeout=1.0)
    assert info.value.oid == "1.3.6.1.4.1.32473.1.99.0"
    assert "noSuchObject" in str(info.value)


def test_non_get_pdu_gets_generr(quiet_agent):
    pdu = V2C.SetRequestPDU()
    V2C.apiPDU.set_defaults(pdu)
    V2C.apiPDU.set_request_id(pdu, 77)
    V2C.apiPDU.set_varbinds(pdu, [(DEFAULT_CATALOG.oss, V2C.Integer32(1))])
    msg = V2C.Message()
    V2C.apiMessage.set_defaults(msg)
    V2C.apiMessage.set_community(msg, "public")
    V2C.apiMessage.set_pdu(msg, pdu)
    reply = quiet_agent.handle(encoder.encode(msg))
    rid, status, _ = response_varbinds(decode_message(reply)[1])
    assert (rid, status) == (77, 5)
    assert quiet_agent.handle(b"garbage") is None


def test_wrong_community_times_out(quiet_agent):
    s = poll_once(target_for(quiet_agent, community="private"), timeout=0.2, retries=1)
    assert s.transport_error and s.oss is None and s.ber is None
    assert s.poll_latency_ms >= 350


def test_unreachable_target():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    s = poll_once(PollTarget(f"127.0.0.1:{port}", "dead", DEFAULT_CATALOG.poll_map()),
                  timeout=0.2)
    assert s.transport_error


def test_bind_failure(quiet_agent):
    with pytest.raises(OSError):
        MockAgent(link_with(), bind=quiet_agent.address)


def test_agent_rejects_bad_oid_map():
    with pytest.raises(InvalidArgument):
        MockAgent(link_with(), oid_map={"q_factor": DEFAULT_CATALOG.q_factor})
    with pytest.raises(InvalidArgument):
        MockAgent(link_with(), oid_map={"oss": "1.2", "channel_q": "1.3"})


class FakeAgent:
    """Replies to every GET with fixed wire values."""

    def __init__(self, values):
        self.values = values
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind(("127.0.0.1", 0))
        self.sock.settimeout(0.1)
        self.address = self.sock.getsockname()
        self.stop = threading.Event()
        self.thread = threading.Thread(target=self.serve, daemon=True)
        self.thread.start()

    def serve(self):
        while not self.stop.is_set():
            try:
                data, peer = self.sock.recvfrom(65535)
            except socket.timeout:
                continue
            community, pdu = decode_message(data)
            rid = int(V2C.apiPDU.get_request_id(pdu))
            binds = [(str(o), self.values[str(o)]) for o, _ in V2C.apiPDU.get_varbinds(pdu)]
            self.sock.sendto(encode_response(community, rid, binds), peer)

    def close(self):
        self.stop.set()
        self.thread.join()
        self.sock.close()


@pytest.mark.parametrize("oss,ber,bad", [
    (V2C.Integer32(-800), V2C.OctetString("1.0E-x"), "ber"),
    (V2C.OctetString("-8.00"), V2C.OctetString("1E-9"), "oss"),
    (V2C.Integer32(5000), V2C.OctetString("1E-9"), "oss"),
    (V2C.Integer32(-800), V2C.OctetString("3.5"), "ber"),
])
def test_malformed_values_name_the_oid(oss, ber, bad):
    cat = DEFAULT_CATALOG
    fake = FakeAgent({cat.oss: oss, cat.pre_fec_ber: ber})
    try:
        target = PollTarget("%s:%d" % fake.address, "f", cat.poll_map())
        with pytest.raises(DecodeError) as info:
            poll_once(target, timeout=1.0)
        assert info.value.oid == target.oids[bad]
    finally:
        fake.close()


def test_custom_decode_spec():
    cat = DEFAULT_CATALOG
    fake = FakeAgent({cat.oss: V2C.OctetString("-7.5"), cat.pre_fec_ber: V2C.Integer32(3)})
    try:
        target = PollTarget("%s:%d" % fake.address, "f", cat.poll_map(),
                            decode={"oss": DecodeSpec("decimal"), "ber": DecodeSpec("int", 1e-9)})
        s = poll_once(target, timeout=1.0)
        assert s.oss == -7.5 and s.ber == pytest.approx(3e-9)
    finally:
        fake.close()


def test_poll_target_validation():
    oids = DEFAULT_CATALOG.poll_map()
    with pytest.raises(InvalidArgument):
        PollTarget("h:1", "x", oids, poll_interval=0.01)
    with pytest.raises(InvalidArgument):
        PollTarget("h:1", "x", {"q_factor": DEFAULT_CATALOG.q_factor})
    with pytest.raises(InvalidArgument):
        PollTarget("h:1", "x", {"oss": "not.an.oid"})
    with pytest.raises(InvalidArgument):
        PollTarget("h:x", "x", oids)
    assert parse_address("h") == ("h", 161)
    assert parse_address("h:1161") == ("h", 1161)


class ListSink:
    def __init__(self, fail_after=None):
        self.items, self.fail_after = [], fail_after

    def write(self, sample):
        if self.fail_after is not None and len(self.items) >= self.fail_after:
            raise OSError("disk full")
        self.items.append(sample)

    def flush(self):
        pass


def test_collector_one_target_sixty_seconds():
    clock = ScaledClock(speed=20)
    with MockAgent(link_with(), clock=clock) as agent:
        sink = ListSink()
        summary = run_collector([target_for(agent)], sink, clock=clock, duration=60.0,
                                timeout=0.5)
    assert summary["status"] == "ok"
    assert 58 <= len(sink.items) <= 60
    stats = summary["targets"]["lab"]
    assert stats["decode_error"] == 0 and stats["timeout"] == 0
    assert stats["achieved_rate_hz"] <= 1.01


def test_collector_two_targets_ordered(tmp_path):
    clock = ScaledClock(speed=20)
    with MockAgent(link_with(seed=1), clock=clock) as a, \
            MockAgent(link_with(seed=2), clock=clock) as b:
        path = tmp_path / "c.csv"
        with TraceWriter(path, latency=True) as sink:
            summary = run_collector([target_for(a, "a"), target_for(b, "b", poll_interval=2.0)],
                                    sink, clock=clock, duration=40.0, timeout=0.5)
    samples = load_trace(path)
    for link in ("a", "b"):
        ts = [s.timestamp_ms for s in samples if s.link_id == link]
        assert all(y > x for x, y in zip(ts, ts[1:]))
    assert 38 <= summary["targets"]["a"]["samples"] <= 40
    assert 19 <= summary["targets"]["b"]["samples"] <= 20


def test_collector_ten_second_interval_rate():
    clock = ScaledClock(speed=100)
    with MockAgent(link_with(), clock=clock) as agent:
        sink = ListSink()
        run_collector([target_for(agent, poll_interval=10.0)], sink, clock=clock,
                      duration=400.0, timeout=0.5)
    gaps = np.diff([s.timestamp_ms for s in sink.items]) / 1000.0
    assert abs(gaps.mean() - 10.0) <= 0.5


def test_dead_target_does_not_stall_live_one():
    clock = ScaledClock(speed=10)
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as blackhole:
        blackhole.bind(("127.0.0.1", 0))
        dead = PollTarget("127.0.0.1:%d" % blackhole.getsockname()[1], "dead",
                          DEFAULT_CATALOG.poll_map())
        with MockAgent(link_with(), clock=clock) as agent:
            sink = ListSink()
            summary = run_collector([dead, target_for(agent)], sink, clock=clock,
                                    duration=30.0, timeout=0.3, retries=0)
    assert summary["targets"]["dead"]["timeout"] >= 1
    assert summary["targets"]["dead"]["ok"] == 0
    assert summary["targets"]["lab"]["ok"] >= 29


def test_decode_errors_recorded_not_skipped():
    cat = DEFAULT_CATALOG
    fake = FakeAgent({cat.oss: V2C.Integer32(-800), cat.pre_fec_ber: V2C.OctetString("junk")})
    try:
        clock = ScaledClock(speed=20)
        sink = ListSink()
        summary = run_collector([PollTarget("%s:%d" % fake.address, "f", cat.poll_map())],
                                sink, clock=clock, duration=10.0, timeout=0.5)
    finally:
        fake.close()
    assert summary["targets"]["f"]["decode_error"] == len(sink.items) >= 9
    assert all(s.transport_error for s in sink.items)


def test_sink_failure_stops_with_partial_file(tmp_path):
    clock = ScaledClock(speed=20)
    path = tmp_path / "partial.csv"

    class Failing(TraceWriter):
        def write(self, sample):
            if self.count >= 5:
                raise OSError("disk full")
            super().write(sample)

    with MockAgent(link_with(), clock=clock) as agent:
        with Failing(path) as sink:
            t0 = time.monotonic()
            summary = run_collector([target_for(agent)], sink, clock=clock, duration=3600.0,
                                    timeout=0.5)
            elapsed = time.monotonic() - t0
    assert summary["status"] == "sink_error" and "disk full" in summary["error"]
    assert elapsed < 5.0
    assert len(load_trace(path)) == 5


def test_run_collector_argument_checks():
    with pytest.raises(InvalidArgument):
        run_collector([], ListSink())
    t = PollTarget("127.0.0.1:1", "x", DEFAULT_CATALOG.poll_map())
    with pytest.raises(InvalidArgument):
        run_collector([t, t], ListSink())


def test_scaled_clock():
    c = ScaledClock(speed=100, epoch=0.0)
    start = time.monotonic()
    c.wait(10.0)
    assert 0.09 <= time.monotonic() - start < 0.5
    assert c.now() >= 10.0
    with pytest.raises(ValueError):
        ScaledClock(speed=0)


def test_serve_mock_agent_handle():
    agent = serve_mock_agent(link_with(), ("127.0.0.1", 0))
    try:
        assert poll_once(target_for(agent), timeout=1.0).oss is not None
        assert agent.requests >= 1
    finally:
        agent.stop()
    assert set(default_oid_map()) == {"oss", "ber", "corrected_bits", "q_factor"}
