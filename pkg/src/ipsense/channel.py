"""AWGN/QPSK channel model linking received optical power to SNR and BER.

All functions here are pure. Powers are in dBm, SNR is a linear power
ratio and model BER is a bit error probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import InvalidArgument, SignalLost

OSS_MIN_DBM = -60.0
OSS_MAX_DBM = 10.0


class _LossOfSignal:
    """Singleton marking a received power that does not exist."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "LOSS_OF_SIGNAL"

    def __reduce__(self):
        return (_LossOfSignal, ())


LOSS_OF_SIGNAL = _LossOfSignal()


def check_oss(value) -> float:
    """Validate a parsed OSS reading against the operating range."""
    if value is LOSS_OF_SIGNAL:
        raise SignalLost("loss of signal")
    value = float(value)
    if not math.isfinite(value):
        raise InvalidArgument(f"OSS must be finite, got {value!r}")
    if not OSS_MIN_DBM <= value <= OSS_MAX_DBM:
        raise InvalidArgument(
            f"OSS {value} dBm outside [{OSS_MIN_DBM}, {OSS_MAX_DBM}] dBm")
    return value


@dataclass(frozen=True)
class BendPoint:
    radius_cm: float
    oss_drop_db: float
    ber_multiplier: float = 1.0
    loss_of_signal: bool = False


DEFAULT_BEND_TABLE = (
    BendPoint(5.0, 0.0, 1.0),
    BendPoint(3.0, 0.3, 1.0),
    BendPoint(2.0, 0.8, 1.0),
    BendPoint(1.0, 3.0, 100.0),
    BendPoint(0.5, 15.0, 1.0e4, loss_of_signal=True),
)


@dataclass(frozen=True)
class ChannelParams:
    """Calibration constants of one simulated link.

    Magnitudes are declared defaults, not fitted values. The BER floor is
    chosen so that at ``bit_rate`` the quiescent error count is about 400
    per second, i.e. Poisson spread of 20 errors/s, the same scale as the
    detector's default kernel bandwidth.
    """

    baseline_oss: float = -8.0
    noise_floor: float = -25.0
    oss_noise_std: float = 0.1
    attenuation_slope: float = 0.028
    attenuation_offset_load: float = 32.0
    attenuation_base_drop: float = 0.0
    bend_table: tuple = DEFAULT_BEND_TABLE
    recovery_time_constant: float = 180.0
    onset_time_constant: float = 120.0
    ramp_seconds: float = 2.0
    baseline_ber: float = 4.0e-9
    bit_rate: float = 100e9

    def __post_init__(self):
        for name in ("baseline_oss", "noise_floor"):
            check_oss(getattr(self, name))
        if self.oss_noise_std < 0:
            raise InvalidArgument("oss_noise_std must be >= 0")
        if self.attenuation_slope < 0:
            raise InvalidArgument("attenuation_slope must be >= 0")
        if self.attenuation_offset_load < 0 or self.attenuation_base_drop < 0:
            raise InvalidArgument("attenuation offset/base drop must be >= 0")
        if self.recovery_time_constant <= 0 or self.onset_time_constant <= 0:
            raise InvalidArgument("time constants must be > 0")
        if self.ramp_seconds < 0:
            raise InvalidArgument("ramp_seconds must be >= 0")
        if not 0 <= self.baseline_ber <= 0.5:
            raise InvalidArgument("baseline_ber must lie in [0, 0.5]")
        if self.bit_rate <= 0:
            raise InvalidArgument("bit_rate must be > 0")
        table = tuple(
            p if isinstance(p, BendPoint) else BendPoint(*p) for p in self.bend_table)
        if not table:
            raise InvalidArgument("bend_table must not be empty")
        for a, b in zip(table, table[1:]):
            if not b.radius_cm < a.radius_cm:
                raise InvalidArgument("bend_table radii must be strictly decreasing")
            if b.oss_drop_db < a.oss_drop_db:
                raise InvalidArgument(
                    "bend_table oss_drop must not decrease as radius decreases")
        for p in table:
            if p.radius_cm <= 0 or p.ber_multiplier <= 0 or p.oss_drop_db < 0:
                raise InvalidArgument(f"invalid bend_table entry {p}")
        object.__setattr__(self, "bend_table", table)


def q_function(x):
    """Gaussian tail probability Q(x) = 0.5 * erfc(x / sqrt(2)).

    Accepts a scalar or an array; scalars come back as ``float``.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidArgument("q_function argument must be finite")
    out = 0.5 * erfc(arr / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def qpsk_ber(snr):
    """Bit error probability of QPSK over AWGN at linear SNR ``snr``."""
    arr = np.asarray(snr, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise InvalidArgument("snr must be a nonnegative number")
    if np.any(np.isinf(arr)):
        raise InvalidArgument("snr must be finite")
    return q_function(np.sqrt(2.0 * arr))


def snr_from_oss(oss, noise_floor):
    if oss is LOSS_OF_SIGNAL:
        raise SignalLost("no received power; BER is undefined")
    if noise_floor is LOSS_OF_SIGNAL:
        raise InvalidArgument("noise floor cannot be loss-of-signal")
    oss_arr = np.asarray(oss, dtype=float)
    if not (np.all(np.isfinite(oss_arr)) and math.isfinite(noise_floor)):
        raise InvalidArgument("OSS and noise floor must be finite")
    out = 10.0 ** ((oss_arr - noise_floor) / 10.0)
    return float(out) if out.ndim == 0 else out


def pull_attenuation(load, params: ChannelParams) -> float:
    """Steady-state OSS drop in dB under a pull load in grams."""
    load = float(load)
    if not math.isfinite(load) or load < 0:
        raise InvalidArgument(f"load must be a nonnegative number, got {load}")
    if load < params.attenuation_offset_load:
        return 0.0
    return (params.attenuation_slope * (load - params.attenuation_offset_load)
            + params.attenuation_base_drop)


def bend_response(radius, params: ChannelParams):
    """Return ``(oss_drop_db, ber_multiplier, loss_of_signal)`` for a bend.

    OSS drop is interpolated linearly in radius and the BER multiplier
    log-linearly; both are clamped outside the table.
    """
    radius = float(radius)
    if not math.isfinite(radius) or radius <= 0:
        raise InvalidArgument(f"bend radius must be > 0, got {radius}")
    table = params.bend_table
    los_radii = [p.radius_cm for p in table if p.loss_of_signal]
    lost = bool(los_radii) and radius <= max(los_radii)
    radii = np.array([p.radius_cm for p in table][::-1])
    drops = np.array([p.oss_drop_db for p in table][::-1])
    logm = np.log10([p.ber_multiplier for p in table][::-1])
    drop = float(np.interp(radius, radii, drops))
    mult = float(10.0 ** np.interp(radius, radii, logm))
    return drop, mult, lost
