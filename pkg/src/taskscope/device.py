"""Simulated accelerator with a stream pool and buffered activity records.

Work is placed on a virtual device timeline at enqueue time: a kernel starts
once its stream has drained and an execution slot is free, and runs for
exactly the requested duration.  The timeline is expressed on the shared
monotonic clock, and a completion thread fulfills each token only after the
clock has passed the work item's end, so host-side waits and device records
interleave correctly in traces.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import heapq
import itertools
import sys
import threading
from dataclasses import dataclass
from typing import Callable

from .clock import now_ns
from .snapshot import ActivityKind, ActivityRecord
from .tasking import CompletionToken, current_runtime, current_task, make_promise

DEVICE_CURRENT_BYTES = "device.current_bytes"
DEVICE_PEAK_BYTES = "device.peak_bytes"
HOST_PINNED_CURRENT_BYTES = "host.pinned_current_bytes"
HOST_PINNED_PEAK_BYTES = "host.pinned_peak_bytes"


_PR_SET_TIMERSLACK = 29


def _tighten_timer_slack() -> None:
    """Ask Linux for 1 ns timer slack on the calling thread.

    The default 50 us slack would otherwise be added to every simulated
    kernel completion.  Best effort: silently ignored elsewhere.
    """
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6", use_errno=True)
        libc.prctl(_PR_SET_TIMERSLACK, 1, 0, 0, 0)
    except (OSError, AttributeError):
        pass


class DeviceError(RuntimeError):
    pass


@dataclass(frozen=True)
class DeviceConfig:
    device_id: int = 0
    stream_count: int = 128
    copy_bandwidth_bytes_per_s: float = 12e9
    activity_buffer_capacity: int = 4096
    # kernels that may execute at once, regardless of stream
    kernel_slots: int = 2
    rank: int = 0

    def __post_init__(self) -> None:
        if self.stream_count < 1:
            raise ValueError("stream_count must be >= 1")
        if self.kernel_slots < 1:
            raise ValueError("kernel_slots must be >= 1")
        if self.activity_buffer_capacity < 1:
            raise ValueError("activity_buffer_capacity must be >= 1")
        if self.copy_bandwidth_bytes_per_s <= 0:
            raise ValueError("copy bandwidth must be positive")


@dataclass
class DeviceMemoryState:
    current_device_bytes: int = 0
    peak_device_bytes: int = 0
    current_host_pinned_bytes: int = 0
    peak_host_pinned_bytes: int = 0


class Device:
    def __init__(self, config: DeviceConfig | None = None, profiler=None):
        self.config = config or DeviceConfig()
        self.profiler = profiler
        self._lock = threading.Lock()
        self._cv = threading.Condition(self._lock)
        self._drained = threading.Condition(self._lock)
        self._inflight = 0
        self._stream_free = [0] * self.config.stream_count
        self._slots = [0] * self.config.kernel_slots
        self._pending: list[tuple[int, int, object, int | None]] = []
        self._seq = itertools.count()
        self._buffer: dict[int, ActivityRecord] = {}
        self._completed: set[int] = set()
        self._handles = itertools.count(1)
        self._live: dict[int, tuple[int, bool]] = {}
        self._freed: set[int] = set()
        self.memory = DeviceMemoryState()
        self._delivered = 0
        self._closed = False
        self._engine = threading.Thread(
            target=self._engine_main, name=f"taskscope-device{self.config.device_id}", daemon=True
        )
        self._engine.start()

    @property
    def capture(self) -> bool:
        prof = self.profiler
        return prof is not None and prof.captures_device_activity

    # -- work submission ------------------------------------------------

    def _check_stream(self, stream_id: int) -> None:
        if not 0 <= stream_id < self.config.stream_count:
            raise DeviceError(f"invalid stream {stream_id}; device has {self.config.stream_count}")

    def _submit(self, kind: ActivityKind, name: str, stream_id: int, duration_ns: int,
                nbytes: int | None, launching_task: int | None) -> CompletionToken:
        if launching_task is None:
            ident = current_task()
            launching_task = ident.guid if ident is not None else 0
        promise, token = make_promise(current_runtime())
        capture = self.capture
        if capture and len(self._buffer) >= self.config.activity_buffer_capacity:
            # full buffer: hand completed records over before adding more
            self.flush_activity()
        with self._lock:
            if self._closed:
                promise.fail(DeviceError("device is shut down"))
                return token
            now = now_ns()
            start = max(now, self._stream_free[stream_id])
            if kind is ActivityKind.KERNEL:
                slot_free = heapq.heappop(self._slots)
                start = max(start, slot_free)
                end = start + duration_ns
                heapq.heappush(self._slots, end)
            else:
                end = start + duration_ns
            self._stream_free[stream_id] = end
            seq = next(self._seq)
            rec_key = None
            if capture:
                self._buffer[seq] = ActivityRecord(
                    kind, name, self.config.device_id, stream_id, start, end, nbytes,
                    launching_task, self.config.rank,
                )
                rec_key = seq
            heapq.heappush(self._pending, (end, seq, promise, rec_key))
            self._inflight += 1
            # the engine sleeps until the earliest deadline; wake it only
            # when this submission moved that deadline
            if self._pending[0][1] == seq:
                self._cv.notify()
        return token

    def launch_kernel(self, name: str, stream_id: int, simulated_duration_ns: int,
                      launching_task: int | None = None) -> CompletionToken:
        self._check_stream(stream_id)
        if simulated_duration_ns <= 0:
            raise DeviceError("kernel duration must be positive")
        return self._submit(ActivityKind.KERNEL, name, stream_id, int(simulated_duration_ns), None, launching_task)

    def enqueue_copy(self, kind: ActivityKind | str, nbytes: int, stream_id: int,
                     launching_task: int | None = None, name: str | None = None) -> CompletionToken:
        try:
            kind = ActivityKind(kind)
        except ValueError:
            raise DeviceError(f"invalid copy kind {kind!r}") from None
        if not kind.is_copy:
            raise DeviceError(f"{kind.value} is not a copy kind")
        self._check_stream(stream_id)
        if nbytes <= 0:
            raise DeviceError("copy size must be positive")
        duration = max(1, round(nbytes / self.config.copy_bandwidth_bytes_per_s * 1e9))
        return self._submit(kind, name or kind.value, stream_id, duration, int(nbytes), launching_task)

    # -- memory ----------------------------------------------------------

    def device_alloc(self, nbytes: int, host_pinned: bool = False,
                     launching_task: int | None = None) -> int:
        if nbytes <= 0:
            raise DeviceError("allocation size must be positive")
        with self._lock:
            handle = next(self._handles)
            self._live[handle] = (nbytes, host_pinned)
            current, peak = self._adjust(nbytes, host_pinned)
        self._memory_event(ActivityKind.ALLOC, nbytes, host_pinned, current, peak, launching_task)
        return handle

    def device_free(self, handle: int, launching_task: int | None = None) -> None:
        with self._lock:
            if handle not in self._live:
                if handle in self._freed:
                    raise DeviceError(f"double free of handle {handle}")
                raise DeviceError(f"free of unknown handle {handle}")
            nbytes, host_pinned = self._live.pop(handle)
            self._freed.add(handle)
            current, peak = self._adjust(-nbytes, host_pinned)
        self._memory_event(ActivityKind.FREE, nbytes, host_pinned, current, peak, launching_task)

    def _adjust(self, delta: int, host_pinned: bool) -> tuple[int, int]:
        m = self.memory
        if host_pinned:
            m.current_host_pinned_bytes += delta
            m.peak_host_pinned_bytes = max(m.peak_host_pinned_bytes, m.current_host_pinned_bytes)
            return m.current_host_pinned_bytes, m.peak_host_pinned_bytes
        m.current_device_bytes += delta
        m.peak_device_bytes = max(m.peak_device_bytes, m.current_device_bytes)
        return m.current_device_bytes, m.peak_device_bytes

    def _memory_event(self, kind, nbytes, host_pinned, current, peak, launching_task) -> None:
        prof = self.profiler
        if prof is None:
            return
        if host_pinned:
            prof.sample_counter(HOST_PINNED_CURRENT_BYTES, current)
            prof.sample_counter(HOST_PINNED_PEAK_BYTES, peak)
        else:
            prof.sample_counter(DEVICE_CURRENT_BYTES, current)
            prof.sample_counter(DEVICE_PEAK_BYTES, peak)
        if not self.capture:
            return
        if launching_task is None:
            ident = current_task()
            launching_task = ident.guid if ident is not None else 0
        ts = now_ns()
        label = f"{kind.value}_host_pinned" if host_pinned else kind.value
        record = ActivityRecord(kind, label, self.config.device_id, 0, ts, ts, nbytes,
                                launching_task, self.config.rank)
        with self._lock:
            seq = next(self._seq)
            self._buffer[seq] = record
            self._completed.add(seq)

    # -- activity delivery ----------------------------------------------

    def flush_activity(self, sink: Callable[[ActivityRecord], None] | None = None) -> int:
        """Deliver every completed, undelivered record; returns the count."""
        if sink is None:
            sink = self.profiler.on_activity if self.profiler is not None else None
        with self._lock:
            ready = [self._buffer.pop(seq) for seq in self._completed]
            self._completed.clear()
        ready.sort(key=lambda r: (r.stream_id, r.start_ns, r.end_ns))
        if sink is not None:
            for record in ready:
                sink(record)
        self._delivered += len(ready)
        return len(ready)

    @property
    def buffered(self) -> int:
        with self._lock:
            return len(self._buffer)

    def synchronize(self, timeout: float | None = None) -> None:
        """Block until all submitted work has completed."""
        with self._lock:
            if not self._drained.wait_for(lambda: self._inflight == 0, timeout):
                raise TimeoutError("device work still pending")

    def shutdown(self) -> None:
        self.synchronize()
        with self._lock:
            self._closed = True
            self._cv.notify_all()
        self._engine.join()
        self.flush_activity()

    def _engine_main(self) -> None:
        _tighten_timer_slack()
        with self._lock:
            while True:
                if not self._pending:
                    if self._closed:
                        return
                    self._cv.wait()
                    continue
                end = self._pending[0][0]
                now = now_ns()
                if now < end:
                    self._cv.wait((end - now) / 1e9)
                    continue
                due = []
                while self._pending and self._pending[0][0] <= now:
                    _, _, promise, rec_key = heapq.heappop(self._pending)
                    if rec_key is not None:
                        self._completed.add(rec_key)
                    due.append(promise)
                self._lock.release()
                try:
                    for promise in due:
                        promise.fulfill(None)
                finally:
                    self._lock.acquire()
                self._inflight -= len(due)
                if self._inflight == 0:
                    self._drained.notify_all()
