"""Experiment configuration file (TOML).

Tables: ``[experiment]``, ``[[events]]``, ``[channel]`` (with
``[[channel.bend_table]]``), ``[detector]`` (with optional
``[detector.ber]`` / ``[detector.oss]`` overrides), ``[agent]``,
``[[targets]]`` and ``[output]``. Unknown keys are errors.

Environment overrides: ``IPS_SNMP_COMMUNITY`` replaces every community
string; ``IPS_TARGET_<ID>_ADDR`` replaces the address of the target whose
link id, upper-cased with non-alphanumerics mapped to ``_``, is ``<ID>``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .changepoint import DetectorConfig
from .channel import BendPoint, ChannelParams
from .collector import PollTarget
from .errors import ConfigError, InvalidArgument
from .simulator import StressEvent, StressSchedule, build_paper_schedules
from .snmp import DEFAULT_CATALOG, DecodeSpec, OidCatalog

DEFAULT_FIELD_BANDWIDTH = {"ber": 20.0, "oss": 0.1}


@dataclass(frozen=True)
class CalibrationSettings:
    """How thresholds are derived when the config does not fix them.

    With ``scope = "trace"`` the false-alarm rate applies to a whole
    analysed trace: the per-pair rate is ``target_false_rate`` divided by
    the number of window pairs in that trace.
    """

    target_false_rate: float = 0.05
    scope: str = "trace"
    pairs: int = 2000

    def __post_init__(self):
        if not 0 < self.target_false_rate < 1:
            raise InvalidArgument("target_false_rate must lie in (0, 1)")
        if self.scope not in ("trace", "pair"):
            raise InvalidArgument("calibration scope must be 'trace' or 'pair'")
        if self.pairs < 19:
            raise InvalidArgument("calibration needs at least 19 window pairs")


@dataclass(frozen=True)
class AgentSettings:
    bind: str = "127.0.0.1:1161"
    community: str = "public"
    speed: float = 1.0
    oids: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutputSettings:
    dir: str = "out"
    format: str = "csv"

    def __post_init__(self):
        if self.format not in ("csv", "jsonl"):
            raise InvalidArgument("output format must be csv or jsonl")


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelParams = field(default_factory=ChannelParams)
    detector: dict = field(default_factory=lambda: default_detectors())
    thresholds: dict = field(default_factory=dict)
    calibration: CalibrationSettings = field(default_factory=CalibrationSettings)
    schedule: StressSchedule | None = None
    schedule_name: str | None = None
    targets: tuple = ()
    agent: AgentSettings = field(default_factory=AgentSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    seed: int = 0
    link_id: str = "sim0"
    catalog: OidCatalog = DEFAULT_CATALOG
    source_text: str = ""

    def resolve_schedule(self, name: str | None = None) -> StressSchedule:
        if name:
            return named_schedule(name)
        if self.schedule is not None:
            return self.schedule
        return named_schedule(self.schedule_name or "bend_sweep")

    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode("utf-8")).hexdigest()


def default_detectors() -> dict:
    return {f: DetectorConfig(bandwidth=bw) for f, bw in DEFAULT_FIELD_BANDWIDTH.items()}


def named_schedule(name: str) -> StressSchedule:
    schedules = build_paper_schedules()
    if name not in schedules:
        raise ConfigError(f"unknown schedule {name!r}; known: {sorted(schedules)}")
    return schedules[name]


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*(\[\[?\s*)?[\w.\"]*\b{re.escape(key)}\b")
    for i, line in enumerate(text.splitlines(), start=1):
        if pat.match(line):
            return i
    return None


class _Reader:
    def __init__(self, text):
        self.text = text

    def fail(self, where: str, key: str | None, message: str):
        line = _line_of(self.text, key or where.split(".")[-1].strip("[]"))
        loc = f"line {line}: " if line else ""
        raise ConfigError(f"{loc}[{where}] {message}")

    def table(self, data, where, allowed):
        if not isinstance(data, dict):
            self.fail(where, None, "must be a table")
        unknown = sorted(set(data) - set(allowed))
        if unknown:
            self.fail(where, unknown[0], f"unknown key(s) {unknown}")
        return data

    def build(self, cls, data, where, **extra):
        try:
            return cls(**data, **extra)
        except (InvalidArgument, TypeError, ValueError) as exc:
            key = next(iter(data), None)
            self.fail(where, key, str(exc))


def _field_names(cls):
    return [f.name for f in dataclasses.fields(cls)]


def _env_key(link_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9]", "_", link_id).upper()


def load_config(path=None, text: str | None = None, environ=None) -> ExperimentConfig:
    """Parse a config file (or ``text``); missing tables take defaults."""
    if text is None:
        if path is None:
            text = ""
        else:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
    environ = os.environ if environ is None else environ
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    r = _Reader(text)
    r.table(data, "top level", ["experiment", "events", "channel", "detector",
                                "agent", "targets", "output", "oids"])
    kw = {"source_text": text}

    catalog = DEFAULT_CATALOG
    if "oids" in data:
        catalog = r.build(OidCatalog, r.table(data["oids"], "oids",
                                              _field_names(OidCatalog)), "oids")
        kw["catalog"] = catalog

    exp = r.table(data.get("experiment", {}), "experiment",
                  ["schedule", "seed", "link_id", "total_duration", "fiber_length",
                   "sample_rate"])
    if "seed" in exp:
        kw["seed"] = int(exp["seed"])
    if "link_id" in exp:
        kw["link_id"] = str(exp["link_id"])
    events = data.get("events")
    if events is not None:
        if "schedule" in exp:
            r.fail("experiment", "schedule", "give either a named schedule or [[events]], not both")
        evs = []
        for i, ev in enumerate(events):
            ev = r.table(ev, f"events.{i}", ["kind", "magnitude", "onset", "duration"])
            evs.append(r.build(StressEvent, ev, f"events.{i}"))
        sched = {k: exp[k] for k in ("total_duration", "fiber_length", "sample_rate")
                 if k in exp}
        kw["schedule"] = r.build(StressSchedule, {"events": tuple(evs), **sched},
                                 "experiment", name="custom")
    elif "schedule" in exp:
        try:
            kw["schedule_name"] = named_schedule(str(exp["schedule"])).name
        except ConfigError as exc:
            r.fail("experiment", "schedule", str(exc))

    if "channel" in data:
        ch = dict(r.table(data["channel"], "channel", _field_names(ChannelParams)))
        if "bend_table" in ch:
            rows = []
            for i, row in enumerate(ch["bend_table"]):
                row = r.table(row, f"channel.bend_table.{i}", _field_names(BendPoint))
                rows.append(r.build(BendPoint, row, f"channel.bend_table.{i}"))
            ch["bend_table"] = tuple(rows)
        kw["channel"] = r.build(ChannelParams, ch, "channel")

    if "detector" in data:
        kw.update(_parse_detector(r, data["detector"]))

    if "agent" in data:
        ag = r.table(data["agent"], "agent", _field_names(AgentSettings))
        kw["agent"] = r.build(AgentSettings, ag, "agent")

    if "output" in data:
        kw["output"] = r.build(OutputSettings, r.table(
            data["output"], "output", _field_names(OutputSettings)), "output")

    targets = []
    for i, t in enumerate(data.get("targets", [])):
        t = dict(r.table(t, f"targets.{i}", ["address", "community", "link_id",
                                             "interval", "oids", "extras", "decode"]))
        if "link_id" not in t or "address" not in t:
            r.fail(f"targets.{i}", "targets", "address and link_id are required")
        oids = dict(t.pop("oids", None) or catalog.poll_map(t.pop("extras", ())))
        t.pop("extras", None)
        decode = {}
        for name, spec in (t.pop("decode", None) or {}).items():
            spec = r.table(spec, f"targets.{i}.decode.{name}", ["kind", "scale"])
            decode[name] = r.build(DecodeSpec, spec, f"targets.{i}.decode.{name}")
        env_id = _env_key(str(t["link_id"]))
        address = environ.get(f"IPS_TARGET_{env_id}_ADDR", t["address"])
        community = environ.get("IPS_SNMP_COMMUNITY", t.get("community", "public"))
        targets.append(r.build(PollTarget, {
            "address": address, "link_id": str(t["link_id"]), "oids": oids,
            "community": community, "poll_interval": float(t.get("interval", 1.0)),
            "decode": decode}, f"targets.{i}"))
    kw["targets"] = tuple(targets)
    if "IPS_SNMP_COMMUNITY" in environ and "agent" in kw:
        kw["agent"] = dataclasses.replace(kw["agent"], community=environ["IPS_SNMP_COMMUNITY"])
    return ExperimentConfig(**kw)


def _parse_detector(r: _Reader, table):
    det_keys = [k for k in _field_names(DetectorConfig) if k != "threshold"]
    cal_keys = ["target_false_rate", "scope", "calibration_pairs"]
    table = r.table(table, "detector", det_keys + cal_keys + ["threshold", "ber", "oss"])
    common = {k: v for k, v in table.items() if k in det_keys}
    cal = {k: v for k, v in table.items() if k in cal_keys}
    if "calibration_pairs" in cal:
        cal["pairs"] = cal.pop("calibration_pairs")
    detectors, thresholds = {}, {}
    for fname, bw in DEFAULT_FIELD_BANDWIDTH.items():
        sub = dict(r.table(table.get(fname, {}), f"detector.{fname}",
                           det_keys + ["threshold"]))
        merged = {"bandwidth": bw, **common, **sub}
        threshold = merged.pop("threshold", table.get("threshold"))
        detectors[fname] = r.build(DetectorConfig, merged, f"detector.{fname}")
        if threshold is not None:
            thresholds[fname] = float(threshold)
            if thresholds[fname] < 0:
                r.fail(f"detector.{fname}", "threshold", "threshold must be >= 0")
    return {"detector": detectors, "thresholds": thresholds,
            "calibration": r.build(CalibrationSettings, cal, "detector")}


def describe(config: ExperimentConfig) -> dict:
    """JSON-friendly summary used in sidecar metadata files."""
    def plain(obj):
        if dataclasses.is_dataclass(obj):
            return {k: plain(v) for k, v in dataclasses.asdict(obj).items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        return obj
    return json.loads(json.dumps({
        "channel": plain(config.channel),
        "detector": {k: plain(v) for k, v in config.detector.items()},
        "thresholds": config.thresholds,
        "calibration": plain(config.calibration),
    }))
