from __future__ import annotations

import threading
import time

import pytest

from taskscope.distrib import (
    SCHEDULE_PARCEL,
    DistribError,
    ReductionTimeoutError,
    RemoteActionError,
    World,
)
from taskscope.distrib.transport import FRAME_PARCEL, InProcHub, TcpTransport, TransportError
from taskscope.profiler import ProfilerConfig
from taskscope.snapshot import FlatProfileEntry

PROFILED = {"profiler_config": ProfilerConfig()}


def _echo(payload: bytes) -> bytes:
    return payload[::-1]


@pytest.mark.parametrize("transport", ["inproc", "tcp"])
def test_echo_round_trip(transport):
    with World(2, transport, **PROFILED) as world:
        for loc in world:
            loc.register_action("echo", _echo)
        token = world[0].remote_action(1, "echo", b"abc")
        assert token.wait(10) == b"cba"
        assert world[0].stats.parcels_sent["echo"] == 1
        assert world[1].stats.parcels_received["echo"] == 1


def test_self_action():
    with World(1, **PROFILED) as world:
        world[0].register_action("echo", _echo)
        assert world[0].remote_action(0, "echo", b"xy").wait(5) == b"yx"


def test_each_action_counts_a_call_and_a_schedule():
    n = 25
    with World(2, **PROFILED) as world:
        world[1].register_action("work", lambda p: b"")
        tokens = [world[0].remote_action(1, "work") for _ in range(n)]
        for t in tokens:
            t.wait(10)
        snap = world[1].snapshot()
    assert snap.profile["work"].calls == n
    assert snap.profile[SCHEDULE_PARCEL].calls == n


def test_coroutine_actions():
    async def slow(payload):
        return payload + b"!"

    with World(2) as world:
        world[1].register_action("slow", slow)
        assert world[0].remote_action(1, "slow", b"hi").wait(5) == b"hi!"


def test_remote_errors_surface():
    def boom(_):
        raise ValueError("nope")

    with World(2) as world:
        world[1].register_action("boom", boom)
        with pytest.raises(RemoteActionError, match="nope"):
            world[0].remote_action(1, "boom").wait(5)
        with pytest.raises(RemoteActionError, match="no action"):
            world[0].remote_action(1, "missing").wait(5)


def test_unknown_target():
    with World(2) as world:
        with pytest.raises(DistribError):
            world[0].remote_action(5, "x")


def test_world_of_one_reduce_is_identity():
    with World(1, **PROFILED) as world:
        world[0].profiler.on_task_create(world[0].runtime.new_identity("x"), ts_ns=0)
        local = world[0].snapshot()
        merged = world.reduce()
    assert merged.profile == local.profile


def test_reduce_sums_per_name():
    with World(4, "tcp", **PROFILED) as world:
        def add_entries(loc):
            for g in range(10):
                ident = loc.runtime.new_identity("X")
                loc.profiler.record_timer(ident, 0, 1000)
            return loc.reduce_profiles()

        results = world.run(add_entries)
    merged = results[0]
    assert results[1:] == [None, None, None]
    assert merged.profile["X"] == FlatProfileEntry("X", 40, 40_000, 1000, 1000)


def test_staggered_barrier():
    entered = {}
    left = {}
    with World(3) as world:
        def body(loc):
            time.sleep(0.05 * loc.rank)
            entered[loc.rank] = time.monotonic()
            loc.barrier(timeout=10)
            left[loc.rank] = time.monotonic()

        world.run(body)
    assert min(left.values()) >= max(entered.values())


def test_consecutive_barriers():
    with World(3) as world:
        world.run(lambda loc: (loc.barrier(10), loc.barrier(10)))


def test_reduce_timeout_lists_missing_ranks():
    with World(3, **PROFILED) as world:
        world[2].reduce_profiles()
        with pytest.raises(ReductionTimeoutError) as info:
            world[0].reduce_profiles(timeout=0.3)
    assert info.value.missing == [1]


@pytest.mark.parametrize("transport", ["inproc", "tcp"])
def test_fifo_between_pairs(transport):
    seen = []
    lock = threading.Lock()

    def record(payload):
        with lock:
            seen.append(int(payload))
        return b""

    with World(2, transport) as world:
        world[1].register_action("rec", record)
        tokens = [world[0].remote_action(1, "rec", str(i).encode()) for i in range(200)]
        world.run(lambda loc: loc.barrier(10))
        assert all(t.done for t in tokens)
    assert seen == list(range(200))


def test_tcp_frames_delivered_in_order():
    a, b = TcpTransport(0), TcpTransport(1)
    peers = [a.address, b.address]
    a.set_peers(peers)
    b.set_peers(peers)
    got = []
    done = threading.Event()

    def deliver(kind, payload):
        got.append((kind, payload))
        if len(got) == 50:
            done.set()

    a.start(lambda *_: None)
    b.start(deliver)
    try:
        for i in range(50):
            a.send(1, FRAME_PARCEL, i.to_bytes(4, "big") * (i + 1))
        assert done.wait(10)
        assert got == [(FRAME_PARCEL, i.to_bytes(4, "big") * (i + 1)) for i in range(50)]
    finally:
        a.close()
        b.close()


def test_inproc_hub_rejects_bad_rank():
    hub = InProcHub(2)
    with pytest.raises(TransportError):
        hub.endpoint(2)
