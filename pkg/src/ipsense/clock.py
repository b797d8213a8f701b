"""Wall clocks, optionally running faster than real time.

The mock agent and the collector share one clock object so an
accelerated experiment stays consistent on both sides of the wire.
"""
from __future__ import annotations

import threading
import time


class Clock:
    speed = 1.0

    def now(self) -> float:
        """Clock time in seconds since the epoch."""
        return time.time()

    def wait(self, seconds: float, stop: threading.Event | None = None) -> bool:
        """Sleep for ``seconds`` of clock time; return True if ``stop`` fired."""
        real = max(seconds, 0.0) / self.speed
        if stop is None:
            time.sleep(real)
            return False
        return stop.wait(real)


class ScaledClock(Clock):
    """Clock that advances ``speed`` clock seconds per real second."""

    def __init__(self, speed: float = 1.0, epoch: float | None = None):
        if not speed > 0:
            raise ValueError("clock speed must be > 0")
        self.speed = float(speed)
        self._epoch = time.time() if epoch is None else float(epoch)
        self._mono0 = time.monotonic()

    def now(self) -> float:
        return self._epoch + (time.monotonic() - self._mono0) * self.speed


SYSTEM_CLOCK = Clock()
