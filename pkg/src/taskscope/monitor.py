"""Operating-system interrogation for the periodic monitor."""

from __future__ import annotations

import os
import resource
import sys
import threading
import time
from typing import Callable

_PAGE_SIZE = os.sysconf("SC_PAGE_SIZE") if hasattr(os, "sysconf") else 4096


def resident_set_bytes() -> int:
    try:
        with open("/proc/self/statm") as f:
            return int(f.read().split()[1]) * _PAGE_SIZE
    except OSError:
        # no procfs: the peak is the closest reading the stdlib offers
        return peak_resident_set_bytes()


def peak_resident_set_bytes() -> int:
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    # ru_maxrss is KiB on Linux, bytes on macOS
    return peak if sys.platform == "darwin" else peak * 1024


class CpuMeter:
    """Process CPU utilization between consecutive reads."""

    def __init__(self) -> None:
        self._last_cpu = time.process_time()
        self._last_wall = time.monotonic()

    def utilization(self) -> float:
        cpu, wall = time.process_time(), time.monotonic()
        d_wall = wall - self._last_wall
        frac = (cpu - self._last_cpu) / d_wall if d_wall > 0 else 0.0
        self._last_cpu, self._last_wall = cpu, wall
        return frac


class PeriodicMonitor:
    """Calls ``tick`` every ``period_s`` seconds on a daemon thread.

    Ticks are scheduled on an absolute grid (start + k * period) so the tick
    count does not drift with the cost of each tick.
    """

    def __init__(self, tick: Callable[[], object], period_s: float):
        if period_s <= 0:
            raise ValueError("period must be positive")
        self._tick = tick
        self.period_s = period_s
        self.ticks = 0
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._run, name="taskscope-monitor", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def _run(self) -> None:
        start = time.monotonic()
        k = 1
        while not self._stop.wait(max(0.0, start + k * self.period_s - time.monotonic())):
            self._tick()
            self.ticks += 1
            k += 1
            # skip grid points already missed instead of bursting
            behind = int((time.monotonic() - start) / self.period_s)
            if behind >= k:
                k = behind + 1
