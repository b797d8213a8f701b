"""SNMP v2c GET codec, OID catalog and wire encodings of link signals.

Wire encodings served by the mock agent and expected by the collector:

* OSS: INTEGER, hundredths of a dBm (-812 means -8.12 dBm). The value
  ``LOS_OSS_HUNDREDTHS`` (-9999) marks loss of signal.
* BER: OCTET STRING holding a decimal in scientific notation
  (``"4.120000E-09"``); the empty string when no BER exists.
* corrected_bits: Counter64, cumulative corrected bit count.
* q_factor: OCTET STRING decimal, Q factor in dB; empty on loss.

Message encoding is delegated to pysnmp's protocol modules; transport is
plain UDP sockets.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields

from pyasn1.codec.ber import decoder, encoder
from pyasn1.error import PyAsn1Error
from pysnmp.proto import api

from .errors import DecodeError, InvalidArgument

V2C = api.v2c
LOS_OSS_HUNDREDTHS = -9999
DEFAULT_PORT = 161
_OID_RE = re.compile(r"^\d+(\.\d+)+$")

# IANA enterprise 32473 is reserved for documentation; real deployments
# override these with the vendor MIB's OIDs.
_BASE = "1.3.6.1.4.1.32473.1"


def check_oid(oid: str) -> str:
    oid = str(oid).strip().lstrip(".")
    if not _OID_RE.match(oid):
        raise InvalidArgument(f"not a dotted-decimal OID: {oid!r}")
    return oid


@dataclass(frozen=True)
class OidCatalog:
    oss: str = f"{_BASE}.1.0"
    pre_fec_ber: str = f"{_BASE}.2.0"
    corrected_zeros: str = f"{_BASE}.3.0"
    corrected_ones: str = f"{_BASE}.4.0"
    corrected_bits: str = f"{_BASE}.5.0"
    corrected_words: str = f"{_BASE}.6.0"
    q_factor: str = f"{_BASE}.7.0"
    chromatic_dispersion: str = f"{_BASE}.8.0"
    channel_q: str = f"{_BASE}.9.0"

    def __post_init__(self):
        for f in fields(self):
            check_oid(getattr(self, f.name))

    def poll_map(self, extras=()) -> dict:
        """Name -> OID map for a poll target: ``oss``, ``ber`` and extras."""
        out = {"oss": self.oss, "ber": self.pre_fec_ber}
        for name in extras:
            out[name] = getattr(self, name)
        return out


DEFAULT_CATALOG = OidCatalog()


@dataclass(frozen=True)
class DecodeSpec:
    """How to turn one OID's wire value into a number.

    ``kind`` is ``"int"`` (INTEGER/Counter scaled by ``scale``) or
    ``"decimal"`` (OCTET STRING parsed as a decimal, scaled by ``scale``).
    """

    kind: str = "decimal"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("int", "decimal"):
            raise InvalidArgument(f"unknown decode kind {self.kind!r}")


DEFAULT_DECODE = {
    "oss": DecodeSpec("int", 0.01),
    "ber": DecodeSpec("decimal", 1.0),
    "corrected_bits": DecodeSpec("int", 1.0),
    "corrected_zeros": DecodeSpec("int", 1.0),
    "corrected_ones": DecodeSpec("int", 1.0),
    "corrected_words": DecodeSpec("int", 1.0),
    "q_factor": DecodeSpec("decimal", 1.0),
    "channel_q": DecodeSpec("decimal", 1.0),
    "chromatic_dispersion": DecodeSpec("int", 1.0),
}


def encode_oss(oss_dbm) -> int:
    if oss_dbm is None:
        return LOS_OSS_HUNDREDTHS
    return int(round(oss_dbm * 100.0))


def encode_ber(ber) -> str:
    return "" if ber is None else f"{ber:.6E}"


_EXCEPTION_NAMES = {V2C.NoSuchObject.tagSet: "noSuchObject",
                    V2C.NoSuchInstance.tagSet: "noSuchInstance",
                    V2C.EndOfMibView.tagSet: "endOfMibView"}


def is_exception_value(value) -> bool:
    return value.tagSet in _EXCEPTION_NAMES


def decode_value(oid: str, value, spec: DecodeSpec):
    """Decode a wire value; ``None`` for an empty decimal string."""
    if is_exception_value(value):
        raise DecodeError(oid, f"agent returned {_EXCEPTION_NAMES[value.tagSet]}")
    if spec.kind == "int":
        try:
            number = int(value)
            return number if spec.scale == 1 else number * spec.scale
        except (TypeError, ValueError, PyAsn1Error):
            raise DecodeError(oid, f"expected an integer, got {value.prettyPrint()!r}") from None
    try:
        text = bytes(value).decode("ascii").strip()
    except (TypeError, ValueError, PyAsn1Error):
        raise DecodeError(oid, f"expected a decimal string, got {value.prettyPrint()!r}") from None
    if text == "":
        return None
    try:
        number = float(text)
    except ValueError:
        raise DecodeError(oid, f"malformed decimal {text!r}") from None
    if number != number or number in (float("inf"), float("-inf")):
        raise DecodeError(oid, f"non-finite decimal {text!r}")
    return number * spec.scale


def encode_get(community: str, oids, request_id: int) -> bytes:
    pdu = V2C.GetRequestPDU()
    V2C.apiPDU.set_defaults(pdu)
    V2C.apiPDU.set_request_id(pdu, request_id)
    V2C.apiPDU.set_varbinds(pdu, [(oid, V2C.Null("")) for oid in oids])
    msg = V2C.Message()
    V2C.apiMessage.set_defaults(msg)
    V2C.apiMessage.set_community(msg, community)
    V2C.apiMessage.set_pdu(msg, pdu)
    return encoder.encode(msg)


def encode_response(community: str, request_id: int, varbinds,
                    error_status: int = 0, error_index: int = 0) -> bytes:
    pdu = V2C.ResponsePDU()
    V2C.apiPDU.set_defaults(pdu)
    V2C.apiPDU.set_request_id(pdu, request_id)
    V2C.apiPDU.set_error_status(pdu, error_status)
    V2C.apiPDU.set_error_index(pdu, error_index)
    V2C.apiPDU.set_varbinds(pdu, varbinds)
    msg = V2C.Message()
    V2C.apiMessage.set_defaults(msg)
    V2C.apiMessage.set_community(msg, community)
    V2C.apiMessage.set_pdu(msg, pdu)
    return encoder.encode(msg)


def decode_message(data: bytes):
    """Return ``(community, pdu)``; raises ``ValueError`` on garbage."""
    try:
        msg, _ = decoder.decode(data, asn1Spec=V2C.Message())
    except PyAsn1Error as exc:
        raise ValueError(f"undecodable SNMP message: {exc}") from None
    if int(msg["version"]) != 1:
        raise ValueError("not an SNMP v2c message")
    community = bytes(V2C.apiMessage.get_community(msg)).decode("utf-8", "replace")
    return community, V2C.apiMessage.get_pdu(msg)


def response_varbinds(pdu):
    """``(request_id, error_status, [(oid_str, value)])`` of a response PDU."""
    if pdu.tagSet != V2C.ResponsePDU.tagSet:
        raise ValueError("not a response PDU")
    binds = [(str(oid), val) for oid, val in V2C.apiPDU.get_varbinds(pdu)]
    return (int(V2C.apiPDU.get_request_id(pdu)),
            int(V2C.apiPDU.get_error_status(pdu)), binds)
