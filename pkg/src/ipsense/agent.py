"""Mock SNMP v2c agent exposing a simulated link's management values."""
from __future__ import annotations

import logging
import math
import socket
import threading

from scipy.special import erfcinv

from .clock import SYSTEM_CLOCK, Clock
from .errors import InvalidArgument
from .simulator import LiveLink
from .snmp import (DEFAULT_CATALOG, V2C, check_oid, decode_message, encode_ber,
                   encode_oss, encode_response)

log = logging.getLogger(__name__)

SERVED = ("oss", "ber", "corrected_bits", "q_factor")
GEN_ERR = 5


def default_oid_map(catalog=DEFAULT_CATALOG) -> dict:
    return {"oss": catalog.oss, "ber": catalog.pre_fec_ber,
            "corrected_bits": catalog.corrected_bits, "q_factor": catalog.q_factor}


def q_factor_db(ber) -> str:
    if ber is None:
        return ""
    if ber <= 0:
        ber = 1e-300
    q = math.sqrt(2.0) * float(erfcinv(2.0 * min(ber, 0.5)))
    return f"{20.0 * math.log10(max(q, 1e-12)):.2f}"


class MockAgent:
    """UDP agent answering GET requests from a :class:`LiveLink`.

    Experiment time is ``clock.now() - started_at``. Requests with the
    wrong community are dropped, as a real agent would.
    """

    def __init__(self, link: LiveLink, bind=("127.0.0.1", 0), oid_map=None,
                 community="public", clock: Clock = SYSTEM_CLOCK):
        oid_map = dict(default_oid_map() if oid_map is None else oid_map)
        if not ({"oss", "ber"} & set(oid_map)):
            raise InvalidArgument("oid_map must cover oss or ber")
        unknown = set(oid_map) - set(SERVED)
        if unknown:
            raise InvalidArgument(f"mock agent cannot serve {sorted(unknown)}")
        self.by_oid = {check_oid(oid): name for name, oid in oid_map.items()}
        self.link = link
        self.community = community
        self.clock = clock
        self.requests = 0
        self._lock = threading.Lock()
        self._stop = threading.Event()
        try:
            self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self._sock.bind(bind)
        except OSError as exc:
            raise OSError(f"cannot bind mock agent to {bind}: {exc}") from exc
        self._sock.settimeout(0.1)
        self.address = self._sock.getsockname()
        self.started_at = None
        self._thread = None

    def elapsed(self) -> float:
        return self.clock.now() - self.started_at

    def values(self):
        """Consistent snapshot of every served value at the current time."""
        with self._lock:
            t = self.elapsed()
            sample = self.link.sample_at(t)
            errors = self.link.corrected_bits_at(t)
        return {
            "oss": V2C.Integer32(encode_oss(sample.oss)),
            "ber": V2C.OctetString(encode_ber(sample.ber)),
            "corrected_bits": V2C.Counter64(errors),
            "q_factor": V2C.OctetString(q_factor_db(sample.ber)),
        }

    def handle(self, data: bytes):
        try:
            community, pdu = decode_message(data)
        except ValueError as exc:
            log.debug("dropping malformed request: %s", exc)
            return None
        if community != self.community:
            return None
        req_id = int(V2C.apiPDU.get_request_id(pdu))
        oids = [str(oid) for oid, _ in V2C.apiPDU.get_varbinds(pdu)]
        if pdu.tagSet != V2C.GetRequestPDU.tagSet:
            binds = [(oid, V2C.Null("")) for oid in oids]
            return encode_response(community, req_id, binds, GEN_ERR, 1 if oids else 0)
        values = self.values()
        binds = []
        for oid in oids:
            name = self.by_oid.get(oid)
            binds.append((oid, values[name] if name else V2C.NoSuchObject("")))
        return encode_response(community, req_id, binds)

    def _serve(self):
        while not self._stop.is_set():
            try:
                data, peer = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            self.requests += 1
            reply = self.handle(data)
            if reply is not None:
                try:
                    self._sock.sendto(reply, peer)
                except OSError as exc:
                    log.warning("reply to %s failed: %s", peer, exc)

    def start(self):
        self.started_at = self.clock.now()
        self._thread = threading.Thread(target=self._serve, name="mock-agent", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)
        self._sock.close()

    def __enter__(self):
        return self if self._thread else self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_mock_agent(link: LiveLink, bind_address=("127.0.0.1", 161), oid_map=None,
                     community="public", clock: Clock = SYSTEM_CLOCK) -> MockAgent:
    """Start a mock agent for ``link`` and return its running handle."""
    return MockAgent(link, bind_address, oid_map, community, clock).start()
