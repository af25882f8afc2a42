from __future__ import annotations

import math
import random
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from taskscope.profiler import (
    BAD_SAMPLES,
    CPU_UTILIZATION,
    LIFECYCLE_VIOLATIONS,
    PEAK_RSS_BYTES,
    RSS_BYTES,
    Profiler,
    ProfilerConfig,
    sample_mask,
    should_sample,
)
from taskscope.tasking import Runtime, SchedulerConfig, TaskIdentity, make_promise

from oracles import binomial_bounds, replay_profile

MS = 1_000_000


def _ident(guid, name="t", parent=0):
    return TaskIdentity(guid, name, parent)


def test_yield_resume_timer_synthetic():
    p = Profiler()
    p.on_task_create(_ident(1), ts_ns=0)
    p.on_task_start(1, ts_ns=0)
    p.on_task_yield(1, ts_ns=5 * MS)
    p.on_task_resume(1, ts_ns=55 * MS)
    timer = p.timer(1)
    assert timer.accumulated_active_ns == 5 * MS
    p.on_task_stop(1, ts_ns=60 * MS)
    e = p.snapshot().profile["t"]
    assert (e.calls, e.total_active_ns, e.total_yields) == (1, 10 * MS, 1)


def test_no_yield_active_equals_span():
    p = Profiler(ProfilerConfig(scatter_fraction=1.0))
    p.on_task_create(_ident(1), ts_ns=100)
    p.on_task_start(1, ts_ns=200)
    p.on_task_stop(1, ts_ns=1200)
    snap = p.snapshot()
    assert snap.profile["t"].total_active_ns == 1000
    assert snap.scatter[0].start_ns == 200 and snap.scatter[0].duration_ns == 1000


def test_hundred_flux_tasks():
    p = Profiler()
    for g in range(1, 101):
        t0 = g * 10 * MS
        p.on_task_create(_ident(g, "flux"), ts_ns=t0)
        p.on_task_start(g, ts_ns=t0)
        p.on_task_stop(g, ts_ns=t0 + 2 * MS)
    e = p.snapshot().profile["flux"]
    assert (e.calls, e.total_active_ns, e.mean_ns) == (100, 200 * MS, 2 * MS)


@pytest.mark.parametrize("bad", [
    [("start", 1)],
    [("create", 1), ("yield", 1)],
    [("create", 1), ("start", 1), ("resume", 1)],
    [("create", 1), ("start", 1), ("stop", 1), ("stop", 1)],
    [("create", 1), ("create", 1)],
])
def test_lifecycle_violations_are_counted_and_dropped(bad):
    p = Profiler()
    for ts, (kind, guid) in enumerate(bad):
        if kind == "create":
            p.on_task_create(_ident(guid), ts_ns=ts)
        else:
            getattr(p, f"on_task_{kind}")(guid, ts_ns=ts)
    assert p.diagnostics[LIFECYCLE_VIOLATIONS] == 1


def test_time_going_backwards_is_a_violation():
    p = Profiler()
    p.on_task_create(_ident(1), ts_ns=10)
    p.on_task_start(1, ts_ns=20)
    p.on_task_stop(1, ts_ns=15)
    assert p.diagnostics[LIFECYCLE_VIOLATIONS] == 1
    assert "t" not in p.snapshot().profile


def test_disabled_profiler_is_inert():
    p = Profiler(ProfilerConfig.disabled())
    p.on_task_create(_ident(1))
    p.on_task_start(1)
    p.on_task_stop(1)
    assert p.sample_counter("x", 1.0) is None
    assert p.monitor_tick() == []
    assert p.snapshot().is_empty


def test_counter_stats():
    p = Profiler()
    p.sample_counter("c", 1.0, ts_ns=1)
    p.sample_counter("c", 3.0, ts_ns=2)
    s = p.snapshot().counters["c"]
    assert (s.count, s.min, s.max, s.mean, s.last) == (2, 1.0, 3.0, 2.0, 3.0)


def test_counter_absent_without_samples():
    assert Profiler().snapshot().counters == {}


def test_counter_closed_form_mean():
    p = Profiler()
    for k in range(1, 10_001):
        p.sample_counter("k", float(k), ts_ns=k)
    assert p.snapshot().counters["k"].mean == 5000.5


def test_nan_samples_are_dropped():
    p = Profiler()
    p.sample_counter("c", math.nan)
    assert p.diagnostics[BAD_SAMPLES] == 1
    assert "c" not in p.snapshot().counters


def test_counter_timestamps_non_decreasing():
    p = Profiler()
    for i in range(200):
        p.sample_counter("c" if i % 2 else "d", float(i))
    samples = p.snapshot().counter_samples
    for name in ("c", "d"):
        ts = [s.ts_ns for s in samples if s.name == name]
        assert ts == sorted(ts)


def test_monitor_tick_readings():
    p = Profiler()
    first = {s.name: s.value for s in p.monitor_tick()}
    second = {s.name: s.value for s in p.monitor_tick()}
    assert set(first) == {CPU_UTILIZATION, RSS_BYTES, PEAK_RSS_BYTES}
    assert first[RSS_BYTES] > 0
    assert second[PEAK_RSS_BYTES] >= first[PEAK_RSS_BYTES] >= first[RSS_BYTES] * 0
    assert first[CPU_UTILIZATION] >= 0


def test_periodic_monitor_tick_count():
    period_ms = 20
    p = Profiler(ProfilerConfig(monitor_period_ms=period_ms))
    p.start_monitor()
    t0 = time.monotonic()
    time.sleep(0.5)
    ticks = p.stop_monitor()
    duration = time.monotonic() - t0
    expected = int(duration * 1000 // period_ms)
    assert expected - 1 <= ticks <= expected + 1
    rss = [s for s in p.snapshot().counter_samples if s.name == RSS_BYTES]
    assert len(rss) == ticks


def test_should_sample_edges_and_determinism():
    assert not any(should_sample(g, 0.0) for g in range(1000))
    assert all(should_sample(g, 1.0) for g in range(1000))
    assert [should_sample(g, 0.3, 7) for g in range(500)] == [should_sample(g, 0.3, 7) for g in range(500)]


def test_sampling_binomial_bound():
    lo, hi = binomial_bounds(100_000, 0.01)
    assert (round(lo), round(hi)) == (874, 1126)
    count = int(sample_mask(np.arange(1, 100_001), 0.01, seed=3).sum())
    assert lo <= count <= hi


@given(st.lists(st.integers(min_value=0, max_value=2**63), min_size=1, max_size=50),
       st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=0, max_value=2**64 - 1))
def test_sample_mask_matches_scalar(guids, fraction, seed):
    mask = sample_mask(np.array(guids, dtype=np.uint64), fraction, seed)
    assert list(mask) == [should_sample(g, fraction, seed) for g in guids]


def test_scatter_sampling_follows_fraction():
    p = Profiler(ProfilerConfig(scatter_fraction=0.2, trace=False))
    for g in range(1, 5001):
        p.on_task_create(_ident(g), ts_ns=g)
        p.on_task_start(g, ts_ns=g)
        p.on_task_stop(g, ts_ns=g + 1)
    lo, hi = binomial_bounds(5000, 0.2)
    n = len(p.snapshot().scatter)
    assert lo <= n <= hi
    assert n <= p.snapshot().profile["t"].calls


def test_edges_parent_child():
    p = Profiler()
    p.on_task_create(_ident(1, "step"), ts_ns=0)
    p.on_task_start(1, ts_ns=0)
    for g in (2, 3, 4):
        p.on_task_create(_ident(g, "flux", parent=1), ts_ns=g)
        p.on_task_start(g, ts_ns=g)
        p.on_task_stop(g, ts_ns=g + 1)
    p.on_task_stop(1, ts_ns=10)
    assert p.snapshot().edges == {("step", "flux"): 3}


def test_provisional_entries_only_on_request():
    p = Profiler()
    p.on_task_create(_ident(1, "running"), ts_ns=0)
    p.on_task_start(1, ts_ns=0)
    assert p.snapshot().profile == {}
    assert p.snapshot().provisional == {}
    prov = p.snapshot(include_running=True).provisional
    assert prov["running"].calls == 1


def test_trace_segments_per_active_interval():
    p = Profiler()
    p.on_task_create(_ident(1), ts_ns=0)
    p.on_task_start(1, ts_ns=0, worker=0)
    p.on_task_yield(1, ts_ns=5, worker=0)
    p.on_task_resume(1, ts_ns=9, worker=3)
    p.on_task_stop(1, ts_ns=12, worker=3)
    segs = p.snapshot().segments
    assert [(s.worker, s.start_ns, s.end_ns) for s in segs] == [(0, 0, 5), (3, 9, 12)]


def test_replay_oracle_on_four_workers():
    """Per-name totals equal an independent replay of the raw event log."""
    prof = Profiler(ProfilerConfig(event_log=True))
    rng = random.Random(11)
    with Runtime(SchedulerConfig(worker_count=4), profiler=prof) as rt:
        gates = [make_promise() for _ in range(30)]

        async def worker_task(i):
            x = 0
            for _ in range(rng.randint(100, 2000)):
                x += 1
            if i % 3 == 0:
                await gates[i][1]
            return x

        async def opener():
            for p, _ in gates:
                p.fulfill()

        for i in range(30):
            rt.spawn(worker_task, i, name=f"w{i % 4}")
        rt.spawn(opener, name="opener")
        rt.run_until_idle(timeout=10)
    snap = prof.snapshot()
    oracle = replay_profile(prof.events)
    assert set(oracle) == set(snap.profile)
    for name, row in oracle.items():
        e = snap.profile[name]
        assert (e.calls, e.total_active_ns, e.min_ns, e.max_ns, e.total_yields) == (
            row["calls"], row["total_ns"], row["min_ns"], row["max_ns"], row["yields"])


def test_runtime_timer_excludes_suspension():
    prof = Profiler()
    with Runtime(SchedulerConfig(worker_count=2), profiler=prof) as rt:
        promise, token = make_promise(rt)

        async def body():
            await token

        rt.spawn(body, name="sleepy")
        time.sleep(0.03)
        promise.fulfill()
        rt.run_until_idle(timeout=5)
    e = prof.snapshot().profile["sleepy"]
    assert e.total_active_ns < 20 * MS
    assert e.total_yields == 1


def test_config_validation():
    with pytest.raises(ValueError):
        ProfilerConfig(scatter_fraction=1.5)
    with pytest.raises(ValueError):
        ProfilerConfig(monitor_period_ms=0)
