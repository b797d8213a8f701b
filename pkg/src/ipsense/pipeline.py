"""Glue between simulation, calibration and detection for whole traces."""
from __future__ import annotations

import logging

from .changepoint import (FIELDS, detect_changes, field_values, pair_divergences,
                          threshold_from_divergences, with_threshold)
from .samples import split_by_link
from .simulator import StressSchedule, simulate

log = logging.getLogger(__name__)

CALIBRATION_SEED_OFFSET = 1_000_003


def quiescent_trace(config, pairs: int | None = None, seed: int | None = None):
    """Unstressed simulated trace long enough for ``pairs`` window pairs."""
    pairs = pairs or config.calibration.pairs
    window = max(d.window_size for d in config.detector.values())
    duration = (pairs + 1) * window
    sched = StressSchedule((), total_duration=float(duration), sample_rate=1.0,
                           name="quiescent")
    if seed is None:
        seed = config.seed + CALIBRATION_SEED_OFFSET
    return simulate(sched, config.channel, seed=seed, link_id="quiescent")


def pair_count(samples, field, detector) -> int:
    values, _ = field_values(samples, field, detector)
    return max(values.size // detector.window_size - 1, 0)


def per_pair_rate(calibration, n_pairs: int) -> float:
    if calibration.scope == "pair":
        return calibration.target_false_rate
    return calibration.target_false_rate / max(n_pairs, 1)


class Calibrator:
    """Caches quiescent divergences per field and derives thresholds."""

    def __init__(self, config, quiescent=None):
        self.config = config
        self._quiescent = quiescent
        self._kls = {}

    def divergences(self, field):
        if field not in self._kls:
            if self._quiescent is None:
                self._quiescent = quiescent_trace(self.config)
            det = self.config.detector[field]
            values, _ = field_values(self._quiescent, field, det)
            self._kls[field] = pair_divergences(values, det)
        return self._kls[field]

    def threshold(self, field, n_pairs: int) -> float:
        if field in self.config.thresholds:
            return self.config.thresholds[field]
        rate = per_pair_rate(self.config.calibration, n_pairs)
        kls = self.divergences(field)
        if rate * kls.size < 1:
            log.warning("calibration has %d pairs; a per-pair rate of %.2g is "
                        "resolved by its maximum only", kls.size, rate)
        return threshold_from_divergences(kls, rate)


def detect_trace(samples, config, fields=FIELDS, calibrator=None):
    """Detect on every link of a trace; returns ``(events, thresholds)``.

    ``thresholds`` maps ``(link_id, field)`` to the threshold used.
    """
    calibrator = calibrator or Calibrator(config)
    events, used = [], {}
    for link_id, stream in split_by_link(samples).items():
        for field in fields:
            det = config.detector[field]
            thr = calibrator.threshold(field, pair_count(stream, field, det))
            used[(link_id, field)] = thr
            found = detect_changes(stream, field, with_threshold(det, thr), link_id)
            if field != fields[0]:
                found = [e for e in found if e.kind != "signal_lost"]
            events.extend(found)
    events.sort(key=lambda e: (e.signal_id, e.t_start, e.kind))
    return events, used
