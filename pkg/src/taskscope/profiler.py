"""Task-aware measurement core.

Timers are keyed by task guid rather than by thread, so a task that yields on
one worker and resumes on another keeps a single timer whose active time
excludes the suspended interval.
"""

from __future__ import annotations

import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .clock import now_ns
from .monitor import CpuMeter, PeriodicMonitor, peak_resident_set_bytes, resident_set_bytes
from .snapshot import (
    ActivityKind,
    ActivityRecord,
    CounterSample,
    CounterStats,
    FlatProfileEntry,
    ScatterSample,
    Snapshot,
    TraceSegment,
)
from .tasking import ROOT_GUID, TaskIdentity

log = logging.getLogger(__name__)

CREATED, RUNNING, YIELDED, STOPPED = "created", "running", "yielded", "stopped"

LIFECYCLE_VIOLATIONS = "profiler.lifecycle_violations"
BAD_SAMPLES = "profiler.bad_samples"
MONITOR_FAILURES = "profiler.monitor_failures"

CPU_UTILIZATION = "cpu.utilization"
RSS_BYTES = "memory.rss_bytes"
PEAK_RSS_BYTES = "memory.peak_rss_bytes"
DEVICE_KERNEL_NS = "device.kernel_ns"
DEVICE_COPY_BYTES = "device.copy_bytes"

_MASK64 = (1 << 64) - 1


def _mix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _threshold(fraction: float) -> int:
    return int(fraction * 2.0**64)


def should_sample(guid: int, fraction: float, seed: int = 0) -> bool:
    """Deterministic Bernoulli(fraction) decision for one task instance."""
    if fraction <= 0.0:
        return False
    if fraction >= 1.0:
        return True
    return _mix64(_mix64(seed & _MASK64) ^ (guid & _MASK64)) < _threshold(fraction)


def sample_mask(guids: np.ndarray, fraction: float, seed: int = 0) -> np.ndarray:
    """Vectorized :func:`should_sample` over an array of guids."""
    guids = np.asarray(guids, dtype=np.uint64)
    if fraction <= 0.0:
        return np.zeros(guids.shape, dtype=bool)
    if fraction >= 1.0:
        return np.ones(guids.shape, dtype=bool)
    with np.errstate(over="ignore"):
        z = guids ^ np.uint64(_mix64(seed & _MASK64))
        z = z + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z < np.uint64(_threshold(fraction))


@dataclass
class ProfilerConfig:
    enabled: bool = True
    scatter_fraction: float = 0.01
    monitor_period_ms: int = 100
    sampling_seed: int = 0
    # per-category switches
    cpu_timers: bool = True
    device_activity: bool = True
    counters: bool = True
    monitor: bool = True
    trace: bool = True
    # raw lifecycle log, for replay checks
    event_log: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.scatter_fraction <= 1.0:
            raise ValueError("scatter_fraction must be in [0, 1]")
        if self.monitor_period_ms <= 0:
            raise ValueError("monitor_period_ms must be positive")

    @classmethod
    def disabled(cls) -> "ProfilerConfig":
        return cls(enabled=False)


@dataclass(slots=True)
class TaskTimer:
    identity: TaskIdentity
    create_ns: int
    first_start_ns: int | None = None
    last_stop_ns: int | None = None
    accumulated_active_ns: int = 0
    yield_count: int = 0
    state: str = CREATED
    segment_start_ns: int = 0
    segment_worker: int = 0
    segments: list | None = None

    @property
    def span_ns(self) -> int | None:
        if self.first_start_ns is None or self.last_stop_ns is None:
            return None
        return self.last_stop_ns - self.first_start_ns


@dataclass(frozen=True)
class LifecycleEvent:
    kind: str
    guid: int
    name: str
    parent_guid: int
    ts_ns: int
    worker: int


class Profiler:
    def __init__(self, config: ProfilerConfig | None = None, rank: int = 0):
        self.config = config or ProfilerConfig()
        self.rank = rank
        self._lock = threading.Lock()
        self._timers: dict[int, TaskTimer] = {}
        self._labels: dict[int, str] = {}
        self._profile: dict[str, FlatProfileEntry] = {}
        self._device_profile: dict[str, FlatProfileEntry] = {}
        self._counters: dict[str, CounterStats] = {}
        self._samples: list[CounterSample] = []
        self._scatter: list[ScatterSample] = []
        self._edges: Counter[tuple[str, str]] = Counter()
        self._segments: list[TraceSegment] = []
        self._activities: list[ActivityRecord] = []
        self._diagnostics: Counter[str] = Counter()
        self.events: list[LifecycleEvent] = []
        self._seed = _mix64(self.config.sampling_seed) ^ rank
        self._cpu = CpuMeter()
        self._peak_rss = 0
        self._monitor: PeriodicMonitor | None = None
        c = self.config
        self._timers_on = c.enabled and c.cpu_timers
        self._activity_on = c.enabled and c.device_activity
        self._counters_on = c.enabled and c.counters
        self._trace_on = c.trace
        self._event_log = c.event_log

    @property
    def enabled(self) -> bool:
        return self.config.enabled

    @property
    def scatter_seed(self) -> int:
        """Seed passed to :func:`should_sample` for this profiler's tasks."""
        return self._seed

    @property
    def captures_device_activity(self) -> bool:
        return self._activity_on

    # -- lifecycle hooks ----------------------------------------------

    def _violation(self, what: str, guid: int) -> None:
        self._diagnostics[LIFECYCLE_VIOLATIONS] += 1
        log.debug("dropped out-of-order %s for task %d", what, guid)

    def _log(self, kind: str, timer: TaskTimer, ts: int, worker: int) -> None:
        ident = timer.identity
        self.events.append(LifecycleEvent(kind, ident.guid, ident.label, ident.parent_guid or 0, ts, worker))

    def on_task_create(self, identity: TaskIdentity, ts_ns: int | None = None) -> None:
        if not self._timers_on:
            return
        with self._lock:
            ts = now_ns() if ts_ns is None else ts_ns
            if identity.guid in self._timers or identity.guid in self._labels:
                self._violation("create", identity.guid)
                return
            timer = TaskTimer(identity, ts)
            self._timers[identity.guid] = timer
            self._labels[identity.guid] = identity.label
            if self._event_log:
                self._log("create", timer, ts, -1)

    def on_task_start(self, guid: int, ts_ns: int | None = None, worker: int = 0) -> None:
        if not self._timers_on:
            return
        with self._lock:
            ts = now_ns() if ts_ns is None else ts_ns
            timer = self._timers.get(guid)
            if timer is None or timer.state != CREATED or ts < timer.create_ns:
                self._violation("start", guid)
                return
            timer.first_start_ns = ts
            timer.segment_start_ns = ts
            timer.segment_worker = worker
            timer.state = RUNNING
            if self._event_log:
                self._log("start", timer, ts, worker)

    def on_task_yield(self, guid: int, ts_ns: int | None = None, worker: int = 0) -> None:
        if not self._timers_on:
            return
        with self._lock:
            ts = now_ns() if ts_ns is None else ts_ns
            timer = self._timers.get(guid)
            if timer is None or timer.state != RUNNING or ts < timer.segment_start_ns:
                self._violation("yield", guid)
                return
            self._close_segment(timer, ts)
            timer.yield_count += 1
            timer.state = YIELDED
            if self._event_log:
                self._log("yield", timer, ts, worker)

    def on_task_resume(self, guid: int, ts_ns: int | None = None, worker: int = 0) -> None:
        if not self._timers_on:
            return
        with self._lock:
            ts = now_ns() if ts_ns is None else ts_ns
            timer = self._timers.get(guid)
            if timer is None or timer.state != YIELDED or ts < timer.segment_start_ns:
                self._violation("resume", guid)
                return
            timer.segment_start_ns = ts
            timer.segment_worker = worker
            timer.state = RUNNING
            if self._event_log:
                self._log("resume", timer, ts, worker)

    def on_task_stop(self, guid: int, ts_ns: int | None = None, worker: int = 0) -> None:
        if not self._timers_on:
            return
        with self._lock:
            ts = now_ns() if ts_ns is None else ts_ns
            timer = self._timers.get(guid)
            if timer is None or timer.state != RUNNING or ts < timer.segment_start_ns:
                self._violation("stop", guid)
                return
            self._close_segment(timer, ts)
            timer.last_stop_ns = ts
            timer.state = STOPPED
            if self._event_log:
                self._log("stop", timer, ts, worker)
            del self._timers[guid]
            self._fold(timer)

    def record_timer(self, identity: TaskIdentity, start_ns: int, stop_ns: int, worker: int = 0) -> None:
        """Record a completed interval that was not run as a scheduled task."""
        self.on_task_create(identity, start_ns)
        self.on_task_start(identity.guid, start_ns, worker)
        self.on_task_stop(identity.guid, stop_ns, worker)

    def timer(self, guid: int) -> TaskTimer | None:
        """Live (not yet stopped) timer for ``guid``."""
        with self._lock:
            return self._timers.get(guid)

    def _close_segment(self, timer: TaskTimer, ts: int) -> None:
        timer.accumulated_active_ns += ts - timer.segment_start_ns
        if self._trace_on:
            # plain tuples here; TraceSegment objects are built at snapshot time
            seg = (timer.segment_worker, timer.segment_start_ns, ts)
            if timer.segments is None:
                timer.segments = [seg]
            else:
                timer.segments.append(seg)

    def _fold(self, timer: TaskTimer) -> None:
        ident = timer.identity
        name = ident.label
        entry = self._profile.get(name)
        if entry is None:
            entry = self._profile[name] = FlatProfileEntry(name)
        entry.record(timer.accumulated_active_ns, timer.yield_count)
        parent = ident.parent_guid
        if parent is not None and parent != ROOT_GUID:
            parent_name = self._labels.get(parent)
            if parent_name is not None:
                self._edges[(parent_name, name)] += 1
        if should_sample(ident.guid, self.config.scatter_fraction, self._seed):
            self._scatter.append(
                ScatterSample(name, timer.first_start_ns, timer.accumulated_active_ns, self.rank, ident.guid)
            )
        if timer.segments:
            parent_guid = parent or 0
            self._segments.extend(
                (name, ident.guid, parent_guid, worker, start, stop) for worker, start, stop in timer.segments
            )

    # -- counters -----------------------------------------------------

    def sample_counter(self, name: str, value: float, ts_ns: int | None = None) -> CounterSample | None:
        if not self._counters_on:
            return None
        value = float(value)
        with self._lock:
            if math.isnan(value):
                self._diagnostics[BAD_SAMPLES] += 1
                return None
            ts = now_ns() if ts_ns is None else ts_ns
            return self._record_sample_locked(name, value, ts)

    def _record_sample_locked(self, name: str, value: float, ts: int) -> CounterSample:
        sample = CounterSample(name, ts, value, self.rank)
        self._samples.append(sample)
        stats = self._counters.get(name)
        if stats is None:
            stats = self._counters[name] = CounterStats(name)
        stats.record(value, ts)
        return sample

    def monitor_tick(self) -> list[CounterSample]:
        """Interrogate the OS once; each reading becomes a counter sample."""
        if not self._counters_on:
            return []
        out = []
        readings = (
            (CPU_UTILIZATION, self._cpu.utilization),
            (RSS_BYTES, resident_set_bytes),
            (PEAK_RSS_BYTES, self._read_peak),
        )
        for name, read in readings:
            try:
                value = read()
            except (OSError, ValueError, ImportError) as exc:
                with self._lock:
                    self._diagnostics[MONITOR_FAILURES] += 1
                log.debug("monitor reading %s failed: %s", name, exc)
                continue
            sample = self.sample_counter(name, value)
            if sample is not None:
                out.append(sample)
        return out

    def _read_peak(self) -> int:
        self._peak_rss = max(self._peak_rss, peak_resident_set_bytes(), resident_set_bytes())
        return self._peak_rss

    def start_monitor(self) -> None:
        if not (self._counters_on and self.config.monitor) or self._monitor is not None:
            return
        self._monitor = PeriodicMonitor(self.monitor_tick, self.config.monitor_period_ms / 1000.0)
        self._monitor.start()

    def stop_monitor(self) -> int:
        """Stop the periodic monitor; returns the number of ticks taken."""
        if self._monitor is None:
            return 0
        self._monitor.stop()
        ticks = self._monitor.ticks
        self._monitor = None
        return ticks

    # -- device activity ----------------------------------------------

    def on_activity(self, record: ActivityRecord) -> None:
        if not self._activity_on:
            return
        with self._lock:
            self._activities.append(record)
            entry = self._device_profile.get(record.name)
            if entry is None:
                entry = self._device_profile[record.name] = FlatProfileEntry(record.name)
            entry.record(record.duration_ns)
            if not self._counters_on:
                return
            # per-record device metrics, as activity APIs report them
            if record.kind is ActivityKind.KERNEL:
                self._record_sample_locked(DEVICE_KERNEL_NS, float(record.duration_ns), record.end_ns)
            elif record.kind.is_copy and record.bytes is not None:
                self._record_sample_locked(DEVICE_COPY_BYTES, float(record.bytes), record.end_ns)

    # -- snapshot -----------------------------------------------------

    def snapshot(self, include_running: bool = False) -> Snapshot:
        if not self.config.enabled:
            return Snapshot(rank=self.rank)
        with self._lock:
            provisional: dict[str, FlatProfileEntry] = {}
            if include_running:
                ts = now_ns()
                for timer in self._timers.values():
                    if timer.state == CREATED:
                        continue
                    active = timer.accumulated_active_ns
                    if timer.state == RUNNING:
                        active += ts - timer.segment_start_ns
                    name = timer.identity.label
                    entry = provisional.get(name)
                    if entry is None:
                        entry = provisional[name] = FlatProfileEntry(name)
                    entry.record(active, timer.yield_count)
            snap = Snapshot(
                rank=self.rank,
                profile={k: v.copy() for k, v in self._profile.items()},
                device_profile={k: v.copy() for k, v in self._device_profile.items()},
                provisional=provisional,
                counters={k: v.copy() for k, v in self._counters.items()},
                counter_samples=list(self._samples),
                scatter=list(self._scatter),
                edges=dict(self._edges),
                segments=[TraceSegment(*seg, self.rank) for seg in self._segments],
                activities=list(self._activities),
                diagnostics=dict(self._diagnostics),
            )
        return snap.canonicalize()

    @property
    def diagnostics(self) -> dict[str, int]:
        with self._lock:
            return dict(self._diagnostics)
