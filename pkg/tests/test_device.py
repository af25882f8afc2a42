from __future__ import annotations

import random
import statistics
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskscope.clock import now_ns
from taskscope.device import (
    DEVICE_CURRENT_BYTES,
    DEVICE_PEAK_BYTES,
    Device,
    DeviceConfig,
    DeviceError,
)
from taskscope.profiler import DEVICE_COPY_BYTES, DEVICE_KERNEL_NS, Profiler, ProfilerConfig
from taskscope.snapshot import ActivityKind

US = 1_000
MS = 1_000_000


@pytest.fixture
def profiled():
    prof = Profiler()
    dev = Device(DeviceConfig(), prof)
    yield dev, prof
    dev.shutdown()


def _records(dev, prof):
    dev.synchronize(timeout=10)
    dev.flush_activity()
    return prof.snapshot().activities


def test_single_kernel_duration(profiled):
    dev, prof = profiled
    dev.launch_kernel("k", 3, 100 * US, launching_task=7).wait(5)
    (rec,) = _records(dev, prof)
    assert rec.stream_id == 3 and rec.correlation_guid == 7
    assert abs(rec.duration_ns - 100 * US) <= 5 * US


def test_token_not_before_record_end(profiled):
    dev, prof = profiled
    dev.launch_kernel("k", 0, 300 * US).wait(5)
    seen = now_ns()
    (rec,) = _records(dev, prof)
    assert seen >= rec.end_ns


def test_same_stream_serializes(profiled):
    dev, prof = profiled
    a = dev.launch_kernel("a", 5, MS)
    b = dev.launch_kernel("b", 5, MS)
    b.wait(5)
    assert a.done
    ra, rb = sorted(_records(dev, prof), key=lambda r: r.start_ns)
    assert rb.start_ns == ra.end_ns


def test_distinct_streams_overlap():
    dev = Device(DeviceConfig())
    try:
        samples = []
        for _ in range(5):
            t0 = time.perf_counter_ns()
            a = dev.launch_kernel("a", 0, MS)
            b = dev.launch_kernel("b", 1, MS)
            a.wait(5)
            b.wait(5)
            samples.append(time.perf_counter_ns() - t0)
        assert statistics.median(samples) < 1.5 * MS
    finally:
        dev.shutdown()


def test_kernel_slots_cap_concurrency():
    prof = Profiler()
    dev = Device(DeviceConfig(kernel_slots=1), prof)
    try:
        dev.launch_kernel("a", 0, MS)
        dev.launch_kernel("b", 1, MS)
        ra, rb = sorted(_records(dev, prof), key=lambda r: r.start_ns)
        assert rb.start_ns >= ra.end_ns
    finally:
        dev.shutdown()


def test_copy_duration_from_bandwidth():
    prof = Profiler()
    dev = Device(DeviceConfig(copy_bandwidth_bytes_per_s=1e9), prof)
    try:
        dev.enqueue_copy(ActivityKind.COPY_D2D, 1_000_000, 2).wait(5)
        (rec,) = _records(dev, prof)
        assert rec.duration_ns == MS and rec.bytes == 1_000_000
        assert rec.kind is ActivityKind.COPY_D2D
    finally:
        dev.shutdown()


def test_copy_bytes_conserved(profiled):
    dev, prof = profiled
    rng = random.Random(5)
    kinds = [ActivityKind.COPY_H2D, ActivityKind.COPY_D2H, ActivityKind.COPY_D2D]
    requested = 0
    for _ in range(200):
        n = rng.randint(1, 4096)
        requested += n
        dev.enqueue_copy(rng.choice(kinds), n, rng.randrange(128))
    recs = _records(dev, prof)
    assert sum(r.bytes for r in recs if r.kind.is_copy) == requested


def test_alloc_free_example(profiled):
    dev, prof = profiled
    h1 = dev.device_alloc(100)
    dev.device_alloc(50)
    dev.device_free(h1)
    assert (dev.memory.current_device_bytes, dev.memory.peak_device_bytes) == (50, 150)
    counters = prof.snapshot().counters
    assert counters[DEVICE_CURRENT_BYTES].last == 50
    assert counters[DEVICE_PEAK_BYTES].max == 150
    kinds = [r.kind for r in _records(dev, prof)]
    assert kinds.count(ActivityKind.ALLOC) == 2 and kinds.count(ActivityKind.FREE) == 1


@settings(max_examples=50)
@given(st.lists(st.tuples(st.booleans(), st.integers(min_value=1, max_value=10_000)), max_size=40))
def test_memory_matches_bump_oracle(ops):
    dev = Device(DeviceConfig())
    try:
        live, current, peak = [], 0, 0
        for is_alloc, n in ops:
            if is_alloc or not live:
                live.append((dev.device_alloc(n), n))
                current += n
            else:
                handle, size = live.pop(n % len(live))
                dev.device_free(handle)
                current -= size
            peak = max(peak, current)
            assert (dev.memory.current_device_bytes, dev.memory.peak_device_bytes) == (current, peak)
        for handle, _ in live:
            dev.device_free(handle)
        assert dev.memory.current_device_bytes == 0 and dev.memory.peak_device_bytes == peak
    finally:
        dev.shutdown()


def test_pinned_host_tracked_separately():
    dev = Device()
    try:
        h = dev.device_alloc(64, host_pinned=True)
        assert dev.memory.current_host_pinned_bytes == 64 and dev.memory.current_device_bytes == 0
        dev.device_free(h)
        assert dev.memory.peak_host_pinned_bytes == 64
    finally:
        dev.shutdown()


def test_bad_frees():
    dev = Device()
    try:
        h = dev.device_alloc(8)
        dev.device_free(h)
        with pytest.raises(DeviceError, match="double"):
            dev.device_free(h)
        with pytest.raises(DeviceError, match="unknown"):
            dev.device_free(999)
    finally:
        dev.shutdown()


def test_invalid_arguments():
    dev = Device(DeviceConfig(stream_count=4))
    try:
        with pytest.raises(DeviceError):
            dev.launch_kernel("k", 4, 10)
        with pytest.raises(DeviceError):
            dev.launch_kernel("k", 0, 0)
        with pytest.raises(DeviceError):
            dev.enqueue_copy("sideways", 10, 0)
        with pytest.raises(DeviceError):
            dev.enqueue_copy(ActivityKind.KERNEL, 10, 0)
        with pytest.raises(DeviceError):
            dev.device_alloc(0)
    finally:
        dev.shutdown()


def test_flush_semantics(profiled):
    dev, prof = profiled
    assert dev.flush_activity() == 0
    tokens = [dev.launch_kernel("k", i, 50 * US, launching_task=100 + i) for i in range(10)]
    for t in tokens:
        t.wait(5)
    assert dev.flush_activity() == 10
    assert dev.flush_activity() == 0
    assert sorted(r.correlation_guid for r in prof.snapshot().activities) == list(range(100, 110))


def test_buffer_overflow_forces_flush():
    prof = Profiler()
    dev = Device(DeviceConfig(activity_buffer_capacity=4), prof)
    try:
        for i in range(20):
            dev.launch_kernel("k", i % 8, 10 * US).wait(5)
        assert dev.buffered <= 4
        dev.flush_activity()
        assert len(prof.snapshot().activities) == 20
    finally:
        dev.shutdown()


def test_no_capture_without_device_activity():
    prof = Profiler(ProfilerConfig(device_activity=False))
    dev = Device(DeviceConfig(), prof)
    try:
        dev.launch_kernel("k", 0, 10 * US).wait(5)
        dev.flush_activity()
        assert prof.snapshot().activities == []
        assert dev.buffered == 0
    finally:
        dev.shutdown()


def test_shutdown_rejects_new_work():
    dev = Device()
    dev.shutdown()
    token = dev.launch_kernel("k", 0, 10)
    with pytest.raises(DeviceError):
        token.wait(1)


def test_capture_samples_device_metrics(profiled):
    dev, prof = profiled
    dev.launch_kernel("k", 0, 40 * US).wait(5)
    dev.enqueue_copy(ActivityKind.COPY_H2D, 4096, 1).wait(5)
    _records(dev, prof)
    counters = prof.snapshot().counters
    assert counters[DEVICE_KERNEL_NS].last == 40 * US
    assert counters[DEVICE_COPY_BYTES].last == 4096
