"""Synthetic OSS/BER streams driven by mechanical stress schedules.

A pull load does not attenuate the link instantly. The attenuation
state creeps toward the load's steady-state drop with
``onset_time_constant`` and, once the load is gone, relaxes toward zero
with ``recovery_time_constant``. Bends act immediately (after a short
ramp) and leave no residual attenuation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (ChannelParams, bend_response, pull_attenuation,
                      qpsk_ber, snr_from_oss)
from .errors import InvalidArgument, ScheduleError
from .samples import SignalSample

BEND = "bend"
PULL = "pull"
MAX_SAMPLE_RATE = 20.0


@dataclass(frozen=True)
class StressEvent:
    kind: str
    magnitude: float
    onset: float
    duration: float

    @property
    def end(self) -> float:
        return self.onset + self.duration

    def describe(self) -> str:
        unit = "cm" if self.kind == BEND else "g"
        return (f"{self.kind} {self.magnitude:g} {unit} at {self.onset:g}s "
                f"for {self.duration:g}s")


@dataclass(frozen=True)
class StressSchedule:
    events: tuple = ()
    total_duration: float = 600.0
    fiber_length: float = 12.1
    sample_rate: float = 1.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def validate(self):
        """Raise :class:`ScheduleError` listing every offending event."""
        bad = []
        problems = []
        if not (0 < self.sample_rate <= MAX_SAMPLE_RATE):
            problems.append(f"sample_rate must lie in (0, {MAX_SAMPLE_RATE}] Hz")
        if not self.total_duration > 0:
            problems.append("total_duration must be > 0")
        if not self.fiber_length > 0:
            problems.append("fiber_length must be > 0")
        for i, ev in enumerate(self.events):
            reasons = []
            if ev.kind not in (BEND, PULL):
                reasons.append(f"unknown kind {ev.kind!r}")
            if not ev.magnitude > 0:
                reasons.append("magnitude must be > 0")
            if not ev.duration > 0:
                reasons.append("duration must be > 0")
            if ev.onset < 0 or ev.end > self.total_duration:
                reasons.append("does not fit within total_duration")
            if i and ev.onset < self.events[i - 1].onset:
                reasons.append("events not sorted by onset")
            elif i and ev.onset < self.events[i - 1].end:
                reasons.append(f"overlaps event {i - 1} ({self.events[i - 1].describe()})")
            if reasons:
                bad.append(i)
                problems.append(f"event {i} ({ev.describe()}): " + "; ".join(reasons))
        if problems:
            raise ScheduleError("invalid schedule: " + " | ".join(problems), bad)
        return self

    def tick_times(self) -> np.ndarray:
        n = int(math.floor(self.total_duration * self.sample_rate + 1e-9))
        return np.arange(n) / self.sample_rate


@dataclass
class ChannelState:
    residual_attenuation: float = 0.0
    last_release_time: float | None = None
    under_stress: bool = False


def recovery_fraction(rest_elapsed, params: ChannelParams = ChannelParams()) -> float:
    """Fraction of the load-induced attenuation recovered after a rest."""
    rest_elapsed = float(rest_elapsed)
    if not math.isfinite(rest_elapsed) or rest_elapsed < 0:
        raise InvalidArgument("rest time must be >= 0")
    return 1.0 - math.exp(-rest_elapsed / params.recovery_time_constant)


def _ramp(t, onset, end, ramp):
    """Trapezoidal envelope on [onset, end); both edges lie inside the event."""
    if t < onset or t >= end:
        return 0.0
    if ramp <= 0:
        return 1.0
    return min((t - onset) / ramp, (end - t) / ramp, 1.0)


def _active_event(schedule, t):
    for ev in schedule.events:
        if ev.onset <= t < ev.end:
            return ev
    return None


def channel_trajectory(schedule: StressSchedule, params: ChannelParams):
    """Noise-free per-tick channel condition.

    Returns a dict of arrays: ``t``, ``oss_mean`` (dBm), ``ber_mean``
    (error probability, NaN on loss), ``loss`` (bool) and
    ``residual`` (pull attenuation state, dB).
    """
    schedule.validate()
    t = schedule.tick_times()
    dt = 1.0 / schedule.sample_rate
    ramp = params.ramp_seconds
    residual = np.zeros(t.size)
    bend_drop = np.zeros(t.size)
    log_mult = np.zeros(t.size)
    loss = np.zeros(t.size, dtype=bool)

    state = ChannelState()
    decay_on = math.exp(-dt / params.onset_time_constant)
    decay_off = math.exp(-dt / params.recovery_time_constant)
    for i, ti in enumerate(t):
        ev = _active_event(schedule, ti)
        target = 0.0
        if ev is not None:
            env = _ramp(ti, ev.onset, ev.end, ramp)
            if ev.kind == PULL:
                target = pull_attenuation(ev.magnitude, params) * env
            else:
                drop, mult, lost = bend_response(ev.magnitude, params)
                bend_drop[i] = drop * env
                log_mult[i] = math.log10(mult) * env
                loss[i] = lost
        stressed = ev is not None and ev.kind == PULL
        if state.under_stress and not stressed:
            state.last_release_time = ti
        state.under_stress = stressed
        a = state.residual_attenuation
        k = decay_on if target > a else decay_off
        state.residual_attenuation = target + (a - target) * k
        residual[i] = state.residual_attenuation

    oss_mean = params.baseline_oss - bend_drop - residual
    awgn = qpsk_ber(snr_from_oss(oss_mean, params.noise_floor))
    ber_mean = np.minimum((params.baseline_ber + awgn) * 10.0 ** log_mult, 0.5)
    ber_mean[loss] = np.nan
    return {"t": t, "oss_mean": oss_mean, "ber_mean": ber_mean,
            "loss": loss, "residual": residual}


def simulate(schedule: StressSchedule, params: ChannelParams = ChannelParams(),
             seed: int = 0, link_id: str = "sim0", start_ms: int = 0):
    """Simulate one link; deterministic for a given ``seed``.

    OSS carries Gaussian measurement noise. BER is the error count in
    each sample interval, Poisson around the modelled error probability,
    divided by the number of bits sent in that interval.
    """
    traj = channel_trajectory(schedule, params)
    rng = np.random.default_rng(seed)
    n = traj["t"].size
    noise = rng.normal(0.0, params.oss_noise_std, n) if params.oss_noise_std else np.zeros(n)
    oss = np.clip(traj["oss_mean"] + noise, -60.0, 10.0)
    bits = params.bit_rate / schedule.sample_rate
    lam = np.where(traj["loss"], 0.0, np.nan_to_num(traj["ber_mean"]) * bits)
    counts = rng.poisson(lam)
    ber = counts / bits
    ts = start_ms + np.round(traj["t"] * 1000.0).astype(np.int64)
    out = []
    for i in range(n):
        if traj["loss"][i]:
            out.append(SignalSample(int(ts[i]), link_id, loss_of_signal=True))
        else:
            out.append(SignalSample(int(ts[i]), link_id, oss=float(oss[i]),
                                    ber=float(min(ber[i], 1.0))))
    return out


def _cycle_schedule(name, kind, magnitudes, durations, rests, lead_in, tail,
                    fiber_length):
    events = []
    t = lead_in
    for mag, dur, rest in zip(magnitudes, durations, rests):
        events.append(StressEvent(kind, float(mag), float(t), float(dur)))
        t += dur + rest
    return StressSchedule(tuple(events), float(t + tail), fiber_length, 1.0, name)


def build_paper_schedules():
    """The four laboratory experiment schedules, keyed by name.

    Each starts with a quiet lead-in so the unstressed baseline is on
    record before the first stress.
    """
    minute = 60.0
    bend = _cycle_schedule(
        "bend_sweep", BEND, [3.0, 2.0, 1.0, 0.5], [2 * minute] * 4,
        [3 * minute] * 4, lead_in=3 * minute, tail=0.0, fiber_length=7.0)
    loads = list(range(50, 141, 10))
    load = _cycle_schedule(
        "load_sweep", PULL, loads, [5 * minute] * len(loads),
        [15 * minute] * len(loads), lead_in=15 * minute, tail=0.0,
        fiber_length=12.1)
    durs = [10.0, 20.0, 30.0, 40.0, 50.0]
    duration = _cycle_schedule(
        "duration_sweep", PULL, [100.0] * len(durs), durs,
        [15 * minute] * len(durs), lead_in=15 * minute, tail=0.0,
        fiber_length=12.1)
    rests = [float(m) * minute for m in range(1, 11)] + [15 * minute]
    rest = _cycle_schedule(
        "rest_sweep", PULL, [100.0] * len(rests), [15 * minute] * len(rests),
        rests, lead_in=15 * minute, tail=0.0, fiber_length=12.1)
    return {s.name: s.validate() for s in (bend, load, duration, rest)}


@dataclass
class LiveLink:
    """A simulated link evaluated against a running clock.

    The whole trace is computed up front; :meth:`sample_at` returns the
    sample of the tick at or before the given experiment time, holding the
    last tick once the schedule has run out.
    """

    schedule: StressSchedule
    params: ChannelParams = field(default_factory=ChannelParams)
    seed: int = 0
    link_id: str = "sim0"

    def __post_init__(self):
        self.samples = simulate(self.schedule, self.params, self.seed, self.link_id)
        self._cum_errors = np.cumsum(
            [0.0 if s.ber is None else s.ber * self.params.bit_rate / self.schedule.sample_rate
             for s in self.samples])

    def index_at(self, elapsed: float) -> int:
        i = int(math.floor(max(elapsed, 0.0) * self.schedule.sample_rate + 1e-9))
        return min(i, len(self.samples) - 1)

    def sample_at(self, elapsed: float) -> SignalSample:
        return self.samples[self.index_at(elapsed)]

    def corrected_bits_at(self, elapsed: float) -> int:
        return int(round(self._cum_errors[self.index_at(elapsed)]))
