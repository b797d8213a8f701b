"""SNMP polling of OSS/BER (plus optional extras) into signal samples."""
from __future__ import annotations

import itertools
import logging
import queue
import random
import socket
import threading
from dataclasses import dataclass, field

from .channel import OSS_MAX_DBM, OSS_MIN_DBM
from .clock import SYSTEM_CLOCK, Clock
from .errors import DecodeError, InvalidArgument
from .samples import SignalSample
from .snmp import (DEFAULT_DECODE, DEFAULT_PORT, LOS_OSS_HUNDREDTHS, DecodeSpec,
                   check_oid, decode_message, decode_value, encode_get,
                   response_varbinds)

log = logging.getLogger(__name__)

MIN_POLL_INTERVAL = 0.05
DEFAULT_TIMEOUT = 2.0
DEFAULT_RETRIES = 1

_request_ids = itertools.count(random.randrange(1, 2**30))


def parse_address(address: str, default_port: int = DEFAULT_PORT):
    host, sep, port = str(address).rpartition(":")
    if not sep:
        return str(address), default_port
    try:
        return host, int(port)
    except ValueError:
        raise InvalidArgument(f"bad port in address {address!r}") from None


@dataclass(frozen=True)
class PollTarget:
    address: str
    link_id: str
    oids: dict
    community: str = "public"
    poll_interval: float = 1.0
    decode: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.poll_interval >= MIN_POLL_INTERVAL:
            raise InvalidArgument(
                f"poll_interval must be >= {MIN_POLL_INTERVAL} s (20 Hz cap)")
        if not ({"oss", "ber"} & set(self.oids)):
            raise InvalidArgument("oids must include oss or ber")
        if not self.link_id:
            raise InvalidArgument("link_id must be nonempty")
        for oid in self.oids.values():
            check_oid(oid)
        parse_address(self.address)

    @property
    def extras(self):
        return tuple(name for name in self.oids if name not in ("oss", "ber"))

    def decode_spec(self, name: str) -> DecodeSpec:
        return self.decode.get(name) or DEFAULT_DECODE.get(name) or DecodeSpec()


def _exchange(sock, addr, payload, req_id, timeout, retries):
    for _ in range(retries + 1):
        sock.sendto(payload, addr)
        sock.settimeout(timeout)
        try:
            while True:
                data, _peer = sock.recvfrom(65535)
                try:
                    _, pdu = decode_message(data)
                    rid, status, binds = response_varbinds(pdu)
                except ValueError:
                    continue
                if rid == req_id:
                    return status, binds
        except socket.timeout:
            continue
    return None


def poll_once(target: PollTarget, clock: Clock = SYSTEM_CLOCK,
              timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES) -> SignalSample:
    """One GET bundle for every configured OID of ``target``.

    A target that never answers yields a transport-error sample. A value
    that cannot be decoded raises :class:`DecodeError` naming the OID.
    """
    names = list(target.oids)
    oids = [check_oid(target.oids[n]) for n in names]
    req_id = next(_request_ids) % 2**31
    payload = encode_get(target.community, oids, req_id)
    host, port = parse_address(target.address)
    sent = clock.now()
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        try:
            reply = _exchange(sock, (host, port), payload, req_id, timeout, retries)
        except OSError as exc:
            log.debug("poll of %s failed: %s", target.address, exc)
            reply = None
    received = clock.now()
    ts = int(round(received * 1000.0))
    latency = (received - sent) * 1000.0 / clock.speed
    if reply is None:
        return SignalSample(ts, target.link_id, poll_latency_ms=latency,
                            transport_error=True)
    status, binds = reply
    if status:
        raise DecodeError(oids[0], f"agent returned error-status {status}")
    got = dict(binds)
    raw, values = {}, {}
    for name, oid in zip(names, oids):
        if oid not in got:
            raise DecodeError(oid, "missing from response")
        raw[name] = got[oid]
        values[name] = decode_value(oid, got[oid], target.decode_spec(name))

    lost = False
    oss = values.get("oss")
    if "oss" in names:
        spec = target.decode_spec("oss")
        if spec.kind == "int" and int(raw["oss"]) == LOS_OSS_HUNDREDTHS:
            lost, oss = True, None
        elif oss is not None and not OSS_MIN_DBM <= oss <= OSS_MAX_DBM:
            raise DecodeError(target.oids["oss"], f"OSS {oss} dBm out of range")
    ber = None if lost else values.get("ber")
    if ber is not None and not 0.0 <= ber <= 1.0:
        raise DecodeError(target.oids["ber"], f"BER {ber} out of [0, 1]")
    extras = {n: values[n] for n in target.extras if values[n] is not None}
    return SignalSample(ts, target.link_id, oss=oss, ber=ber, loss_of_signal=lost,
                        poll_latency_ms=latency, extras=extras)


@dataclass
class TargetStats:
    ok: int = 0
    timeout: int = 0
    decode_error: int = 0
    first_ms: int | None = None
    last_ms: int | None = None

    @property
    def samples(self) -> int:
        return self.ok + self.timeout + self.decode_error

    def achieved_rate(self) -> float:
        if self.samples < 2 or self.last_ms == self.first_ms:
            return 0.0
        return (self.samples - 1) * 1000.0 / (self.last_ms - self.first_ms)

    def as_dict(self) -> dict:
        return {"ok": self.ok, "timeout": self.timeout,
                "decode_error": self.decode_error, "samples": self.samples,
                "achieved_rate_hz": self.achieved_rate()}


def _poll_loop(target, clock, out_q, stop, stats, timeout, retries, deadline):
    next_due = clock.now()
    last_ts = None
    while not stop.is_set():
        now = clock.now()
        if deadline is not None and next_due >= deadline:
            break
        if next_due > now and clock.wait(next_due - now, stop):
            break
        try:
            sample = poll_once(target, clock, timeout, retries)
            if sample.transport_error:
                stats.timeout += 1
            else:
                stats.ok += 1
        except DecodeError as exc:
            log.warning("%s: decode error: %s", target.link_id, exc)
            stats.decode_error += 1
            sample = SignalSample(int(round(clock.now() * 1000.0)), target.link_id,
                                  transport_error=True)
        if last_ts is not None and sample.timestamp_ms <= last_ts:
            sample = _with_timestamp(sample, last_ts + 1)
        last_ts = sample.timestamp_ms
        if stats.first_ms is None:
            stats.first_ms = last_ts
        stats.last_ms = last_ts
        out_q.put(sample)
        next_due += target.poll_interval
        now = clock.now()
        if next_due < now:
            next_due = now


def _with_timestamp(sample, ts):
    return SignalSample(ts, sample.link_id, sample.oss, sample.ber,
                        sample.loss_of_signal, sample.poll_latency_ms,
                        sample.transport_error, sample.extras)


def run_collector(targets, sink, stop: threading.Event | None = None,
                  clock: Clock = SYSTEM_CLOCK, duration: float | None = None,
                  timeout: float = DEFAULT_TIMEOUT, retries: int = DEFAULT_RETRIES) -> dict:
    """Poll every target on its own thread until stopped.

    ``sink`` needs ``write(sample)`` and ``flush()``; it is only ever
    called from a single writer thread. ``duration`` is in clock seconds.
    Returns per-target stats plus ``status`` (``"ok"`` or
    ``"sink_error"``).
    """
    targets = list(targets)
    if not targets:
        raise InvalidArgument("need at least one poll target")
    ids = [t.link_id for t in targets]
    if len(set(ids)) != len(ids):
        raise InvalidArgument("poll targets must have distinct link_ids")
    stop = stop or threading.Event()
    out_q: queue.Queue = queue.Queue()
    stats = {t.link_id: TargetStats() for t in targets}
    deadline = None if duration is None else clock.now() + duration
    pollers = [threading.Thread(
        target=_poll_loop, name=f"poll-{t.link_id}",
        args=(t, clock, out_q, stop, stats[t.link_id], timeout, retries, deadline),
        daemon=True) for t in targets]
    sink_error = []

    def drain():
        while True:
            item = out_q.get()
            if item is None:
                return
            if sink_error:
                continue
            try:
                sink.write(item)
                sink.flush()
            except Exception as exc:  # noqa: BLE001 - any sink failure halts collection
                log.error("sink write failed: %s", exc)
                sink_error.append(exc)
                stop.set()

    writer = threading.Thread(target=drain, name="trace-writer", daemon=True)
    writer.start()
    for p in pollers:
        p.start()
    try:
        for p in pollers:
            while p.is_alive():
                p.join(timeout=0.2)
    except KeyboardInterrupt:
        stop.set()
        for p in pollers:
            p.join()
    out_q.put(None)
    writer.join()
    return {"status": "sink_error" if sink_error else "ok",
            "error": str(sink_error[0]) if sink_error else None,
            "targets": {k: v.as_dict() for k, v in stats.items()}}
