"""Fiber stress sensing from transport-network optical power and BER.

Simulates how bends and pull loads on a fiber show up in received
optical signal strength (OSS) and bit error rate (BER), exposes the
simulated link over SNMP, polls such links, and flags changes with a
windowed KDE / KL-divergence detector.
"""
from .changepoint import (DensityEstimate, DetectionEvent, DetectorConfig,
                          calibrate_threshold, detect_changes, kde_estimate,
                          kl_divergence)
from .channel import (LOSS_OF_SIGNAL, ChannelParams, bend_response, pull_attenuation,
                      q_function, qpsk_ber, snr_from_oss)
from .samples import SignalSample, load_trace, write_trace
from .simulator import (StressEvent, StressSchedule, build_paper_schedules,
                        recovery_fraction, simulate)
from .strain import (FiberGeometry, PhotoelasticConstant, exceeds_critical_phase,
                     phase_change, strain_from_load, strain_from_phase)

__version__ = "0.1.0"

__all__ = [
    "DensityEstimate", "DetectionEvent", "DetectorConfig", "calibrate_threshold",
    "detect_changes", "kde_estimate", "kl_divergence",
    "LOSS_OF_SIGNAL", "ChannelParams", "bend_response", "pull_attenuation",
    "q_function", "qpsk_ber", "snr_from_oss",
    "SignalSample", "load_trace", "write_trace",
    "StressEvent", "StressSchedule", "build_paper_schedules", "recovery_fraction", "simulate",
    "FiberGeometry", "PhotoelasticConstant", "exceeds_critical_phase", "phase_change",
    "strain_from_load", "strain_from_phase",
]
