"""Time sources used by ``sysTime/1``, periodic time parts and the daemon loop."""
from __future__ import annotations

import datetime as _dt
import threading
import time

from .terms import TimePoint

__all__ = ["Clock", "SystemClock", "SimulatedClock", "SIM_EPOCH"]

# simulated clocks count seconds from here unless told otherwise
SIM_EPOCH = TimePoint(1970, 1, 1, 0, 0, 0)


class Clock:
    def now(self) -> TimePoint:
        raise NotImplementedError

    def sleep(self, seconds: float) -> None:
        raise NotImplementedError


class SystemClock(Clock):
    def now(self) -> TimePoint:
        return TimePoint.from_datetime(_dt.datetime.now().replace(microsecond=0))

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class SimulatedClock(Clock):
    """A clock that only moves when told to; ``sleep`` advances it instantly."""

    def __init__(self, start: TimePoint = SIM_EPOCH, offset: int = 0):
        self._start = start
        self._offset = offset
        self._lock = threading.Lock()

    @property
    def elapsed(self) -> float:
        return self._offset

    def now(self) -> TimePoint:
        with self._lock:
            return self._start.shift(int(self._offset))

    def at(self, seconds: float) -> TimePoint:
        return self._start.shift(int(seconds))

    def advance(self, seconds: float) -> None:
        with self._lock:
            self._offset += seconds

    def sleep(self, seconds: float) -> None:
        self.advance(seconds)
