"""Command-line entry point: ``ipsense <command> [options]``.

Exit codes: 0 success, 1 validation error, 2 runtime or I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path

from .agent import MockAgent
from .changepoint import FIELDS, calibrate_threshold
from .clock import SYSTEM_CLOCK, ScaledClock
from .collector import parse_address, run_collector
from .config import describe, load_config
from .errors import (ConfigError, InvalidArgument, ScheduleError, SignalLost,
                     TraceFormatError)
from .pipeline import Calibrator, detect_trace, per_pair_rate
from .report import load_events, write_events, write_report
from .samples import TraceWriter, load_trace, split_by_link, write_trace
from .simulator import LiveLink, simulate

log = logging.getLogger("ipsense")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, ScheduleError, InvalidArgument, TraceFormatError,
                     SignalLost)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args, config) -> Path:
    out = Path(args.out or config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(args, config) -> str:
    return args.format or config.output.format


def _config_with_seed(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def cmd_simulate(args, config):
    schedule = config.resolve_schedule(args.schedule)
    samples = simulate(schedule, config.channel, seed=config.seed, link_id=config.link_id)
    out = _out_dir(args, config)
    fmt = _fmt(args, config)
    path = out / f"{schedule.name}.{fmt}"
    write_trace(samples, path, fmt)
    meta = {
        "config_sha256": config.digest(),
        "seed": config.seed,
        "link_id": config.link_id,
        "schedule": {"name": schedule.name, "total_duration": schedule.total_duration,
                     "fiber_length": schedule.fiber_length,
                     "sample_rate": schedule.sample_rate,
                     "events": [dataclasses.asdict(e) for e in schedule.events]},
        **describe(config),
    }
    meta_path = out / f"{schedule.name}.meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    lost = sum(s.loss_of_signal for s in samples)
    print(f"wrote {len(samples)} samples ({lost} loss-of-signal) to {path}")
    return EXIT_OK


def _fields(args):
    fields = tuple(f.strip() for f in args.fields.split(",") if f.strip())
    bad = [f for f in fields if f not in FIELDS]
    if bad or not fields:
        raise InvalidArgument(f"--fields must name some of {FIELDS}")
    return fields


def _apply_threshold_args(args, config):
    thresholds = dict(config.thresholds)
    if args.threshold is not None:
        thresholds = {f: args.threshold for f in FIELDS}
    return dataclasses.replace(config, thresholds=thresholds)


def _run_detection(args, config, samples):
    config = _apply_threshold_args(args, config)
    quiet = load_trace(args.calibrate_from) if args.calibrate_from else None
    calibrator = Calibrator(config, quiescent=quiet)
    return detect_trace(samples, config, _fields(args), calibrator)


def _summary(events, used):
    kl = [e for e in events if e.kind == "kl_change"]
    return {
        "events": len(events),
        "kl_change": len(kl),
        "signal_lost": sum(e.kind == "signal_lost" for e in events),
        "max_kld": max((e.kld for e in kl), default=None),
        "thresholds": {f"{link}:{field}": thr for (link, field), thr in sorted(used.items())},
    }


def cmd_detect(args, config):
    samples = load_trace(args.trace)
    events, used = _run_detection(args, config, samples)
    out = _out_dir(args, config)
    stem = Path(args.trace).name.split(".")[0]
    events_path = out / f"{stem}.events.jsonl"
    write_events(events, events_path)
    summary = _summary(events, used)
    (out / f"{stem}.detect.json").write_text(json.dumps(summary, indent=2) + "\n")
    max_kld = "n/a" if summary["max_kld"] is None else f"{summary['max_kld']:.4g}"
    print(f"{summary['events']} events ({summary['kl_change']} kl_change, "
          f"{summary['signal_lost']} signal_lost), max KLD {max_kld}; "
          f"written to {events_path}")
    return EXIT_OK


def cmd_calibrate(args, config):
    fields = _fields(args)
    rate = args.target_false_rate or config.calibration.target_false_rate
    cal = dataclasses.replace(config.calibration, target_false_rate=rate)
    if args.scope:
        cal = dataclasses.replace(cal, scope=args.scope)
    config = dataclasses.replace(config, calibration=cal, thresholds={})
    quiet = load_trace(args.trace) if args.trace else None
    result = {}
    for f in fields:
        det = config.detector[f]
        if quiet is not None and cal.scope == "pair":
            thr = calibrate_threshold(quiet, det, rate, f)
        else:
            calibrator = Calibrator(config, quiescent=quiet)
            if quiet is not None and len(calibrator.divergences(f)) < 19:
                raise InvalidArgument(
                    f"calibration needs >= {20 * det.window_size} quiescent samples")
            thr = calibrator.threshold(f, args.pairs_per_trace)
        result[f] = {"threshold": thr,
                     "per_pair_rate": per_pair_rate(cal, args.pairs_per_trace)}
    print(json.dumps(result, indent=2))
    if args.out:
        path = _out_dir(args, config) / "thresholds.json"
        path.write_text(json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def _install_stop(stop):
    def handler(signum, frame):
        stop.set()
    try:
        signal.signal(signal.SIGINT, handler)
        signal.signal(signal.SIGTERM, handler)
    except ValueError:
        pass  # not on the main thread


def cmd_serve_agent(args, config):
    schedule = config.resolve_schedule(args.schedule)
    link = LiveLink(schedule, config.channel, config.seed, config.link_id)
    speed = args.speed or config.agent.speed
    clock = ScaledClock(speed) if speed != 1 else SYSTEM_CLOCK
    bind = parse_address(args.bind or config.agent.bind)
    oid_map = config.agent.oids or None
    agent = MockAgent(link, bind, oid_map, config.agent.community, clock).start()
    print(f"mock agent for {schedule.name} on {agent.address[0]}:{agent.address[1]} "
          f"(speed x{speed:g})", flush=True)
    stop = threading.Event()
    _install_stop(stop)
    deadline = None if args.duration is None else time.monotonic() + args.duration / speed
    try:
        while not stop.is_set():
            if deadline is not None and time.monotonic() >= deadline:
                break
            stop.wait(0.2)
    finally:
        agent.stop()
    print(f"served {agent.requests} requests")
    return EXIT_OK


def cmd_collect(args, config):
    if not config.targets:
        raise ConfigError("no [[targets]] configured")
    speed = args.speed or 1.0
    clock = ScaledClock(speed) if speed != 1 else SYSTEM_CLOCK
    out = _out_dir(args, config)
    fmt = _fmt(args, config)
    path = out / f"collected.{fmt}"
    extras = sorted({x for t in config.targets for x in t.extras})
    stop = threading.Event()
    _install_stop(stop)
    with TraceWriter(path, fmt, extras=extras, latency=True) as sink:
        summary = run_collector(config.targets, sink, stop, clock=clock,
                                duration=args.duration, timeout=args.timeout)
    print(json.dumps(summary, indent=2))
    print(f"wrote {path}")
    return EXIT_OK if summary["status"] == "ok" else EXIT_RUNTIME


def cmd_report(args, config):
    samples = load_trace(args.trace)
    events = load_events(args.events)
    out = _out_dir(args, config) / "report"
    paths = write_report(samples, events, config, out)
    print(f"wrote {len(paths)} files to {out}")
    return EXIT_OK


def cmd_replay(args, config):
    samples = load_trace(args.trace)
    events, used = _run_detection(args, config, samples)
    stem = Path(args.trace).name.split(".")[0]
    out = _out_dir(args, config) / f"{stem}_replay"
    out.mkdir(parents=True, exist_ok=True)
    write_events(events, out / "events.jsonl")
    (out / "detect.json").write_text(json.dumps(_summary(events, used), indent=2) + "\n")
    paths = write_report(samples, events, config, out, thresholds=used)
    links = len(split_by_link(samples))
    print(f"replayed {len(samples)} samples over {links} link(s): {len(events)} events; "
          f"{len(paths) + 2} files in {out}")
    return EXIT_OK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment TOML file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--format", choices=("csv", "jsonl"), default=argparse.SUPPRESS)
    common.add_argument("--log-level", default=argparse.SUPPRESS,
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = _Parser(prog="ipsense", parents=[common],
                     description="Fiber stress sensing from transport-network OSS/BER.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", parents=[common], help="simulate a stress experiment")
    p.add_argument("--schedule", help="named schedule (default: from config)")
    p.set_defaults(func=cmd_simulate)

    def detection_opts(p):
        p.add_argument("trace")
        p.add_argument("--fields", default="ber,oss")
        p.add_argument("--threshold", type=float)
        p.add_argument("--calibrate-from", help="quiescent trace for thresholds")

    p = sub.add_parser("detect", parents=[common], help="run change-point detection")
    detection_opts(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("replay", parents=[common], help="detect and report on a recorded trace")
    detection_opts(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("calibrate", parents=[common], help="derive detector thresholds")
    p.add_argument("trace", nargs="?", help="quiescent trace (default: simulate one)")
    p.add_argument("--fields", default="ber,oss")
    p.add_argument("--target-false-rate", type=float)
    p.add_argument("--scope", choices=("pair", "trace"))
    p.add_argument("--pairs-per-trace", type=int, default=1)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("serve-agent", parents=[common], help="serve a simulated link over SNMP")
    p.add_argument("--schedule")
    p.add_argument("--bind", help="host:port (default from config)")
    p.add_argument("--speed", type=float, help="clock acceleration factor")
    p.add_argument("--duration", type=float, help="stop after this many clock seconds")
    p.set_defaults(func=cmd_serve_agent)

    p = sub.add_parser("collect", parents=[common], help="poll [[targets]] over SNMP")
    p.add_argument("--duration", type=float, help="clock seconds to collect")
    p.add_argument("--speed", type=float, help="clock acceleration factor")
    p.add_argument("--timeout", type=float, default=2.0)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("report", parents=[common], help="plot a trace with its events")
    p.add_argument("trace")
    p.add_argument("events")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"ipsense: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    for name in ("config", "seed", "out", "format", "log_level"):
        if not hasattr(args, name):
            setattr(args, name, None)
    logging.basicConfig(level=args.log_level or "WARNING",
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config_with_seed(args)
        return args.func(args, config)
    except VALIDATION_ERRORS as exc:
        print(f"ipsense: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"ipsense: I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
