"""Windowed KDE / Kullback-Leibler change-point detector.

The stream is cut into consecutive non-overlapping windows. Each pair of
adjacent windows gets a Gaussian KDE on a shared grid, and a change is
flagged when KL(previous || next) exceeds the threshold. Loss-of-signal
runs bypass the density machinery and are reported as ``signal_lost``
events directly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgument

log = logging.getLogger(__name__)

FIELDS = ("ber", "oss")
GRID_PAD_BANDWIDTHS = 6.0
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class DetectorConfig:
    """Detector settings.

    ``bandwidth``, ``grid_min``/``grid_max`` and ``threshold`` are in the
    units of the analysed signal. For the ``ber`` field the signal is bit
    errors per second, i.e. the sample's error ratio times ``bit_rate``.
    """

    window_size: int = 200
    kernel: str = "gaussian"
    bandwidth: float = 20.0
    grid_min: float | None = None
    grid_max: float | None = None
    grid_points: int = 512
    epsilon_floor: float = 1e-12
    threshold: float = 0.0
    symmetric: bool = False
    bit_rate: float = 100e9

    def __post_init__(self):
        if int(self.window_size) != self.window_size or self.window_size < 2:
            raise InvalidArgument("window_size must be an integer >= 2")
        if self.kernel != "gaussian":
            raise InvalidArgument(f"unsupported kernel {self.kernel!r}")
        if not self.bandwidth > 0:
            raise InvalidArgument("bandwidth must be > 0")
        if int(self.grid_points) != self.grid_points or self.grid_points < 16:
            raise InvalidArgument("grid_points must be an integer >= 16")
        if (self.grid_min is None) != (self.grid_max is None):
            raise InvalidArgument("grid_min and grid_max must be set together")
        if self.grid_min is not None and not self.grid_max > self.grid_min:
            raise InvalidArgument("grid_max must exceed grid_min")
        if not self.epsilon_floor > 0:
            raise InvalidArgument("epsilon_floor must be > 0")
        if not (self.threshold >= 0 and math.isfinite(self.threshold)):
            raise InvalidArgument("threshold must be a finite value >= 0")
        if not self.bit_rate > 0:
            raise InvalidArgument("bit_rate must be > 0")


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    sample_count: int

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True)
class DetectionEvent:
    kind: str
    signal_id: str
    t_start: int
    t_end: int
    kld: float | None = None
    threshold: float | None = None
    field: str | None = None
    window_a: tuple | None = None
    window_b: tuple | None = None

    def to_record(self) -> dict:
        rec = {"signal_id": self.signal_id, "t_start": self.t_start,
               "t_end": self.t_end, "kld": self.kld, "threshold": self.threshold,
               "kind": self.kind}
        if self.field is not None:
            rec["field"] = self.field
        if self.window_a is not None:
            rec["window_a"] = list(self.window_a)
            rec["window_b"] = list(self.window_b)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "DetectionEvent":
        wa, wb = rec.get("window_a"), rec.get("window_b")
        return cls(kind=rec["kind"], signal_id=rec["signal_id"],
                   t_start=int(rec["t_start"]), t_end=int(rec["t_end"]),
                   kld=rec.get("kld"), threshold=rec.get("threshold"),
                   field=rec.get("field"),
                   window_a=tuple(wa) if wa is not None else None,
                   window_b=tuple(wb) if wb is not None else None)


def make_grid(lo: float, hi: float, config: DetectorConfig) -> np.ndarray:
    if config.grid_min is not None:
        return np.linspace(config.grid_min, config.grid_max, config.grid_points)
    pad = GRID_PAD_BANDWIDTHS * config.bandwidth
    return np.linspace(lo - pad, hi + pad, config.grid_points)


def _as_finite_array(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise InvalidArgument("cannot estimate a density from no samples")
    if not np.all(np.isfinite(x)):
        raise InvalidArgument("samples must be finite")
    return x


def kde_estimate(samples, config: DetectorConfig, grid=None) -> DensityEstimate:
    """Gaussian KDE of ``samples`` evaluated on ``grid``.

    Without an explicit grid, fixed config bounds are used when set, else
    the sample range padded by six bandwidths.
    """
    x = _as_finite_array(samples)
    if grid is None:
        grid = make_grid(float(x.min()), float(x.max()), config)
    grid = np.asarray(grid, dtype=float)
    h = config.bandwidth
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * _SQRT_2PI)
    return DensityEstimate(grid=grid, density=density, sample_count=int(x.size))


def _floored(d: DensityEstimate, eps: float) -> np.ndarray:
    p = np.maximum(d.density, eps)
    return p / np.trapezoid(p, d.grid)


def kl_divergence(p: DensityEstimate, q: DensityEstimate,
                  epsilon_floor: float = 1e-12) -> float:
    """KL(p || q) by the trapezoid rule on the shared grid, clamped at 0."""
    if p.grid.shape != q.grid.shape or not np.array_equal(p.grid, q.grid):
        raise InvalidArgument("densities must share an identical grid")
    pf = _floored(p, epsilon_floor)
    qf = _floored(q, epsilon_floor)
    kl = float(np.trapezoid(pf * np.log(pf / qf), p.grid))
    return max(kl, 0.0)


def window_divergence(a, b, config: DetectorConfig) -> float:
    """Divergence between two sample windows on their shared grid."""
    a = _as_finite_array(a)
    b = _as_finite_array(b)
    grid = make_grid(min(a.min(), b.min()), max(a.max(), b.max()), config)
    pa = kde_estimate(a, config, grid)
    pb = kde_estimate(b, config, grid)
    kl = kl_divergence(pa, pb, config.epsilon_floor)
    if config.symmetric:
        kl = 0.5 * (kl + kl_divergence(pb, pa, config.epsilon_floor))
    return kl


def field_values(samples, field: str, config: DetectorConfig):
    """Extract ``(values, timestamps_ms)`` of usable samples for ``field``.

    Loss-of-signal and missing readings are skipped.
    """
    if field not in FIELDS:
        raise InvalidArgument(f"unknown field {field!r}; expected one of {FIELDS}")
    vals, ts = [], []
    for s in samples:
        if s.loss_of_signal:
            continue
        v = s.oss if field == "oss" else s.ber
        if v is None:
            continue
        vals.append(v * config.bit_rate if field == "ber" else v)
        ts.append(s.timestamp_ms)
    return np.asarray(vals, dtype=float), np.asarray(ts, dtype=np.int64)


def pair_divergences(values, config: DetectorConfig) -> np.ndarray:
    """KL value for every adjacent pair of non-overlapping windows."""
    values = np.asarray(values, dtype=float)
    w = config.window_size
    n_windows = values.size // w
    out = np.empty(max(n_windows - 1, 0))
    for k in range(n_windows - 1):
        out[k] = window_divergence(values[k * w:(k + 1) * w],
                                   values[(k + 1) * w:(k + 2) * w], config)
    return out


def _check_order(samples):
    prev = None
    for s in samples:
        if prev is not None and s.timestamp_ms <= prev:
            raise InvalidArgument(
                f"timestamps must be strictly increasing ({s.timestamp_ms} after {prev})")
        prev = s.timestamp_ms


def signal_lost_events(samples, signal_id: str):
    events = []
    start = last = None
    for s in samples:
        if s.loss_of_signal:
            if start is None:
                start = s.timestamp_ms
            last = s.timestamp_ms
        elif start is not None and not s.transport_error:
            events.append(DetectionEvent("signal_lost", signal_id, start, last))
            start = None
    if start is not None:
        events.append(DetectionEvent("signal_lost", signal_id, start, last))
    return events


def detect_changes(stream, field: str, config: DetectorConfig,
                   signal_id: str | None = None):
    """Run the detector over one link's ordered samples.

    Returns ``signal_lost`` events for every run of loss-of-signal samples
    and a ``kl_change`` event for every adjacent window pair whose
    divergence exceeds ``config.threshold``; events are ordered by start.
    A missed poll does not split a loss-of-signal run.
    """
    stream = list(stream)
    _check_order(stream)
    if signal_id is None:
        signal_id = stream[0].link_id if stream else ""
    events = signal_lost_events(stream, signal_id)
    values, ts = field_values(stream, field, config)
    w = config.window_size
    if values.size < 2 * w:
        log.warning("only %d usable %s samples for %s; need %d for one window pair",
                    values.size, field, signal_id, 2 * w)
    kls = pair_divergences(values, config)
    for k, kl in enumerate(kls):
        if kl > config.threshold:
            events.append(DetectionEvent(
                "kl_change", signal_id, int(ts[k * w]), int(ts[(k + 2) * w - 1]),
                kld=float(kl), threshold=config.threshold, field=field,
                window_a=(k * w, (k + 1) * w), window_b=((k + 1) * w, (k + 2) * w)))
    events.sort(key=lambda e: (e.t_start, e.kind))
    return events


def calibrate_threshold(quiescent, config: DetectorConfig,
                        target_false_rate: float = 0.05, field: str = "ber") -> float:
    """Threshold exceeded by at most ``target_false_rate`` of quiescent pairs.

    ``quiescent`` is either a sample stream (``field`` selects the signal)
    or a plain sequence of signal values.
    """
    if not 0 < target_false_rate < 1:
        raise InvalidArgument("target_false_rate must lie in (0, 1)")
    quiescent = list(quiescent)
    if quiescent and hasattr(quiescent[0], "link_id"):
        values, _ = field_values(quiescent, field, config)
    else:
        values = np.asarray(quiescent, dtype=float)
    need = 20 * config.window_size
    if values.size < need:
        raise InvalidArgument(
            f"calibration needs >= {need} quiescent samples, got {values.size}")
    return threshold_from_divergences(pair_divergences(values, config), target_false_rate)


def threshold_from_divergences(kls, target_false_rate: float) -> float:
    """Smallest value exceeded by at most ``target_false_rate`` of ``kls``."""
    kls = np.asarray(kls, dtype=float)
    if kls.size == 0:
        raise InvalidArgument("no divergences to calibrate from")
    return float(np.quantile(kls, 1.0 - target_false_rate, method="inverted_cdf"))


def with_threshold(config: DetectorConfig, threshold: float) -> DetectorConfig:
    return replace(config, threshold=float(threshold))
