"""Signal samples and their CSV / JSON-lines trace encoding.

Trace columns: ``timestamp_ms, link_id, oss_dbm, ber, loss_of_signal``,
optionally followed by ``poll_latency_ms`` and ``extra:<name>`` columns.
OSS and BER are empty on loss of signal. A row with both empty and
``loss_of_signal = 0`` is a missed poll (transport error).

Reals are written with ``repr`` so a write/load round trip is exact.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .channel import OSS_MAX_DBM, OSS_MIN_DBM
from .errors import InvalidArgument, TraceFormatError

log = logging.getLogger(__name__)

BASE_COLUMNS = ("timestamp_ms", "link_id", "oss_dbm", "ber", "loss_of_signal")
LATENCY_COLUMN = "poll_latency_ms"
EXTRA_PREFIX = "extra:"
FORMATS = ("csv", "jsonl")


@dataclass(frozen=True)
class SignalSample:
    timestamp_ms: int
    link_id: str
    oss: float | None = None
    ber: float | None = None
    loss_of_signal: bool = False
    poll_latency_ms: float | None = None
    transport_error: bool = False
    extras: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if self.loss_of_signal and (self.ber is not None or self.oss is not None):
            raise InvalidArgument("loss-of-signal sample must not carry OSS or BER")
        if self.oss is not None and not OSS_MIN_DBM <= self.oss <= OSS_MAX_DBM:
            raise InvalidArgument(f"OSS {self.oss} dBm out of range")
        if self.ber is not None and not (0.0 <= self.ber <= 1.0):
            raise InvalidArgument(f"BER {self.ber} out of [0, 1]")

    @property
    def timestamp(self) -> float:
        """Seconds since the epoch."""
        return self.timestamp_ms / 1000.0


def _fmt_real(value) -> str:
    return "" if value is None else repr(float(value))


def _fmt_extra(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_extra(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _parse_real(text, name, line):
    if text is None or text == "":
        return None
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise TraceFormatError(line, f"{name}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise TraceFormatError(line, f"{name}: non-finite value {text!r}")
    return value


def _parse_flag(text, line) -> bool:
    if text in (0, 1, True, False):
        return bool(text)
    if text in ("0", "1"):
        return text == "1"
    raise TraceFormatError(line, f"loss_of_signal must be 0 or 1, got {text!r}")


def _make_sample(line, ts, link_id, oss, ber, los, latency, extras) -> SignalSample:
    try:
        ts = int(ts)
    except (TypeError, ValueError):
        raise TraceFormatError(line, f"timestamp_ms: not an integer: {ts!r}") from None
    if not link_id:
        raise TraceFormatError(line, "link_id is empty")
    oss = _parse_real(oss, "oss_dbm", line)
    ber = _parse_real(ber, "ber", line)
    los = _parse_flag(los, line)
    latency = _parse_real(latency, LATENCY_COLUMN, line)
    try:
        return SignalSample(
            timestamp_ms=ts, link_id=str(link_id), oss=oss, ber=ber,
            loss_of_signal=los, poll_latency_ms=latency,
            transport_error=(oss is None and ber is None and not los),
            extras=extras)
    except InvalidArgument as exc:
        raise TraceFormatError(line, str(exc)) from None


class TraceWriter:
    """Serialized sample writer for one output file.

    The column set is fixed up front; samples written later may not carry
    extras that were not declared.
    """

    def __init__(self, target, fmt="csv", extras=(), latency=False):
        if fmt not in FORMATS:
            raise InvalidArgument(f"unknown trace format {fmt!r}")
        self.fmt = fmt
        self.extras = tuple(extras)
        self.latency = latency
        if isinstance(target, (str, Path)):
            self._fh = open(target, "w", newline="", encoding="utf-8")
            self._owns = True
        else:
            self._fh = target
            self._owns = False
        self.count = 0
        if fmt == "csv":
            self._csv = csv.writer(self._fh, lineterminator="\n")
            header = list(BASE_COLUMNS)
            if latency:
                header.append(LATENCY_COLUMN)
            header += [EXTRA_PREFIX + name for name in self.extras]
            self._csv.writerow(header)

    def write(self, sample: SignalSample):
        unknown = set(sample.extras) - set(self.extras)
        if unknown:
            raise InvalidArgument(f"undeclared extras {sorted(unknown)}")
        if self.fmt == "csv":
            row = [str(sample.timestamp_ms), sample.link_id, _fmt_real(sample.oss),
                   _fmt_real(sample.ber), "1" if sample.loss_of_signal else "0"]
            if self.latency:
                row.append(_fmt_real(sample.poll_latency_ms))
            row += [_fmt_extra(sample.extras.get(name)) for name in self.extras]
            self._csv.writerow(row)
        else:
            rec = {"timestamp_ms": sample.timestamp_ms, "link_id": sample.link_id,
                   "oss_dbm": sample.oss, "ber": sample.ber,
                   "loss_of_signal": int(sample.loss_of_signal)}
            if self.latency:
                rec[LATENCY_COLUMN] = sample.poll_latency_ms
            if self.extras:
                rec["extras"] = {k: sample.extras.get(k) for k in self.extras}
            self._fh.write(json.dumps(rec) + "\n")
        self.count += 1

    def flush(self):
        self._fh.flush()

    def close(self):
        if self._owns:
            self._fh.close()
        else:
            self._fh.flush()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trace(samples, path, fmt=None):
    """Write ``samples`` to ``path``; format defaults to the file suffix."""
    samples = list(samples)
    fmt = fmt or _format_from_path(path)
    extras = sorted({k for s in samples for k in s.extras})
    latency = any(s.poll_latency_ms is not None for s in samples)
    with TraceWriter(path, fmt, extras=extras, latency=latency) as writer:
        for s in samples:
            writer.write(s)


def dumps_trace(samples, fmt="csv") -> str:
    samples = list(samples)
    buf = io.StringIO()
    extras = sorted({k for s in samples for k in s.extras})
    latency = any(s.poll_latency_ms is not None for s in samples)
    writer = TraceWriter(buf, fmt, extras=extras, latency=latency)
    for s in samples:
        writer.write(s)
    return buf.getvalue()


def _format_from_path(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in ("jsonl", "ndjson", "json"):
        return "jsonl"
    return "csv"


def _read_csv(fh):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        return []
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise TraceFormatError(1, f"missing columns {missing}")
    idx = {name: i for i, name in enumerate(header)}
    extra_cols = [(h[len(EXTRA_PREFIX):], i) for i, h in enumerate(header)
                  if h.startswith(EXTRA_PREFIX)]
    out = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise TraceFormatError(
                line, f"expected {len(header)} fields, got {len(row)}")
        extras = {name: _parse_extra(row[i]) for name, i in extra_cols
                  if row[i] != ""}
        out.append(_make_sample(
            line, row[idx["timestamp_ms"]], row[idx["link_id"]],
            row[idx["oss_dbm"]], row[idx["ber"]], row[idx["loss_of_signal"]],
            row[idx[LATENCY_COLUMN]] if LATENCY_COLUMN in idx else None, extras))
    return out


def _read_jsonl(fh):
    out = []
    for line, text in enumerate(fh, start=1):
        if not text.strip():
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(line, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise TraceFormatError(line, "record is not an object")
        missing = [c for c in BASE_COLUMNS if c not in rec]
        if missing:
            raise TraceFormatError(line, f"missing fields {missing}")
        extras = {k: v for k, v in (rec.get("extras") or {}).items() if v is not None}
        out.append(_make_sample(
            line, rec["timestamp_ms"], rec["link_id"], rec["oss_dbm"], rec["ber"],
            rec["loss_of_signal"], rec.get(LATENCY_COLUMN), extras))
    return out


def load_trace(path, fmt=None):
    """Load a trace file, returning samples ordered by timestamp."""
    fmt = fmt or _format_from_path(path)
    if fmt not in FORMATS:
        raise InvalidArgument(f"unknown trace format {fmt!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        samples = _read_csv(fh) if fmt == "csv" else _read_jsonl(fh)
    if not samples:
        log.warning("trace %s is empty", path)
        return []
    keys = [(s.timestamp_ms, s.link_id) for s in samples]
    if keys != sorted(keys, key=lambda k: k[0]):
        log.warning("trace %s is not time-ordered; sorting", path)
        samples = sorted(samples, key=lambda s: s.timestamp_ms)
    seen = set()
    for s in samples:
        key = (s.link_id, s.timestamp_ms)
        if key in seen:
            raise InvalidArgument(
                f"duplicate sample for link {s.link_id!r} at {s.timestamp_ms} ms")
        seen.add(key)
    return samples


def split_by_link(samples):
    """Group samples into per-link lists, preserving order."""
    groups: dict[str, list] = {}
    for s in samples:
        groups.setdefault(s.link_id, []).append(s)
    return groups
