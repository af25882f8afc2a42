"""A locality: one runtime, profiler and device joined to its peers."""

from __future__ import annotations

import dataclasses
import inspect
import itertools
import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from ..clock import now_ns
from ..device import Device, DeviceConfig
from ..export.codec import (
    Control,
    Parcel,
    decode_control,
    decode_parcel,
    decode_snapshot_frame,
    encode_control,
    encode_parcel,
    encode_snapshot_frame,
)
from ..profiler import Profiler, ProfilerConfig
from ..snapshot import Snapshot, merge_profiles
from ..tasking import ROOT_GUID, CompletionToken, Runtime, SchedulerConfig, make_promise
from .transport import FRAME_CONTROL, FRAME_PARCEL, FRAME_SNAPSHOT, InProcHub, TcpTransport

log = logging.getLogger(__name__)

SCHEDULE_PARCEL = "schedule_parcel"
# trace lane for work done on the parcel receive thread
PARCEL_LANE = 9999

_BARRIER_ENTER = 1
_BARRIER_RELEASE = 2

_ERROR_PREFIX = "!"


class DistribError(RuntimeError):
    pass


class RemoteActionError(DistribError):
    pass


class BarrierTimeoutError(DistribError, TimeoutError):
    pass


class ReductionTimeoutError(DistribError, TimeoutError):
    def __init__(self, missing: list[int]):
        self.missing = missing
        super().__init__(f"no snapshot from ranks {missing}")


@dataclass
class MessageStats:
    parcels_sent: Counter = field(default_factory=Counter)
    parcels_received: Counter = field(default_factory=Counter)
    bytes_sent: int = 0


ActionFn = Callable[[bytes], Any]


class Locality:
    """Runtime, profiler and device of one rank plus its messaging endpoint.

    ``profiler_config=None`` leaves the profiler out entirely (no hooks are
    installed), which is different from a present but disabled profiler.
    """

    def __init__(
        self,
        rank: int,
        world_size: int,
        transport,
        *,
        workers: int = 1,
        seed: int = 0,
        profiler_config: ProfilerConfig | None = None,
        device_config: DeviceConfig | None = None,
    ):
        if not 0 <= rank < world_size:
            raise ValueError(f"rank {rank} outside world of size {world_size}")
        self.rank = rank
        self.world_size = world_size
        self.transport = transport
        self.profiler = Profiler(profiler_config, rank=rank) if profiler_config is not None else None
        self.runtime = Runtime(SchedulerConfig(workers, seed), profiler=self.profiler, locality=rank)
        dc = device_config or DeviceConfig()
        dc = dataclasses.replace(dc, rank=rank)
        self.device = Device(dc, profiler=self.profiler)
        self.stats = MessageStats()
        self._actions: dict[str, ActionFn] = {}
        self._ids = itertools.count(1)
        self._cv = threading.Condition()
        self._pending: dict[int, Any] = {}
        self._barrier_epoch = 0
        self._barrier_entries: dict[int, set[int]] = {}
        self._released: set[int] = set()
        self._reduce_epoch = 0
        self._inbox: dict[int, dict[int, Snapshot]] = {}
        self.rank_snapshots: dict[int, Snapshot] = {}
        self._closed = False
        transport.start(self._deliver)
        if self.profiler is not None:
            self.profiler.start_monitor()

    # -- actions ------------------------------------------------------

    def register_action(self, name: str, fn: ActionFn) -> None:
        """``fn(payload) -> bytes``; may be a coroutine function."""
        self._actions[name] = fn

    def remote_action(self, target: int, action_name: str, payload: bytes = b"") -> CompletionToken:
        """Run ``action_name`` on ``target`` via a parcel; the token yields the reply bytes."""
        if not 0 <= target < self.world_size:
            raise DistribError(f"unknown locality {target}")
        parcel_id = next(self._ids)
        promise, token = make_promise(self.runtime)
        with self._cv:
            self._pending[parcel_id] = promise
            self.stats.parcels_sent[action_name] += 1
            self.stats.bytes_sent += len(payload)
        try:
            self._send_parcel(Parcel(action_name, self.rank, target, bytes(payload), parcel_id))
        except Exception as exc:
            with self._cv:
                self._pending.pop(parcel_id, None)
                self._cv.notify_all()
            promise.fail(exc)
        return token

    def _send_parcel(self, parcel: Parcel) -> None:
        self.transport.send(parcel.target, FRAME_PARCEL, encode_parcel(parcel))

    def _deliver(self, kind: int, payload: bytes) -> None:
        try:
            if kind == FRAME_PARCEL:
                self._on_parcel(decode_parcel(payload))
            elif kind == FRAME_CONTROL:
                self._on_control(decode_control(payload))
            elif kind == FRAME_SNAPSHOT:
                epoch, snap = decode_snapshot_frame(payload)
                with self._cv:
                    self._inbox.setdefault(epoch, {})[snap.rank] = snap
                    self._cv.notify_all()
            else:
                log.warning("locality %d: unknown frame kind %d", self.rank, kind)
        except Exception:
            log.exception("locality %d: failed to handle frame kind %d", self.rank, kind)

    def _on_parcel(self, parcel: Parcel) -> None:
        if parcel.reply_to:
            with self._cv:
                promise = self._pending.pop(parcel.reply_to, None)
                self._cv.notify_all()
            if promise is None:
                log.warning("locality %d: reply to unknown parcel %d", self.rank, parcel.reply_to)
            elif parcel.action_name.startswith(_ERROR_PREFIX):
                promise.fail(RemoteActionError(parcel.payload.decode("utf-8", "replace")))
            else:
                promise.fulfill(parcel.payload)
            return
        received = now_ns()
        with self._cv:
            self.stats.parcels_received[parcel.action_name] += 1
        fn = self._actions.get(parcel.action_name)
        if fn is None:
            self._reply(parcel, f"no action {parcel.action_name!r} on locality {self.rank}", error=True)
            return
        self.runtime.spawn(self._run_action, fn, parcel, name=parcel.action_name, parent=ROOT_GUID)
        spawned = now_ns()
        if self.profiler is not None:
            ident = self.runtime.new_identity(SCHEDULE_PARCEL, ROOT_GUID)
            self.profiler.record_timer(ident, received, spawned, worker=PARCEL_LANE)

    async def _run_action(self, fn: ActionFn, parcel: Parcel) -> None:
        try:
            result = fn(parcel.payload)
            if inspect.isawaitable(result):
                result = await result
        except Exception as exc:
            self._reply(parcel, repr(exc), error=True)
            return
        self._reply(parcel, bytes(result or b""))

    def _reply(self, parcel: Parcel, body: bytes | str, error: bool = False) -> None:
        name = _ERROR_PREFIX + parcel.action_name if error else parcel.action_name
        data = body.encode("utf-8") if isinstance(body, str) else body
        self._send_parcel(Parcel(name, self.rank, parcel.source, data, next(self._ids), parcel.parcel_id))

    # -- collectives --------------------------------------------------

    def _on_control(self, msg: Control) -> None:
        if msg.op == _BARRIER_ENTER:
            with self._cv:
                entered = self._barrier_entries.setdefault(msg.epoch, set())
                entered.add(msg.rank)
                complete = len(entered) == self.world_size
            if complete:
                for r in range(self.world_size):
                    self.transport.send(r, FRAME_CONTROL, encode_control(Control(_BARRIER_RELEASE, self.rank, msg.epoch)))
        elif msg.op == _BARRIER_RELEASE:
            with self._cv:
                self._released.add(msg.epoch)
                self._cv.notify_all()

    def barrier(self, timeout: float = 60.0) -> None:
        """Return once every locality has entered this barrier epoch.

        Outstanding remote actions are drained first, so once the barrier
        releases every parcel sent before it has been received.
        """
        epoch = self._barrier_epoch
        self._barrier_epoch += 1
        with self._cv:
            if not self._cv.wait_for(lambda: not self._pending, timeout):
                raise BarrierTimeoutError(f"rank {self.rank}: {len(self._pending)} remote actions unanswered")
        if self.world_size == 1:
            return
        self.transport.send(0, FRAME_CONTROL, encode_control(Control(_BARRIER_ENTER, self.rank, epoch)))
        with self._cv:
            if not self._cv.wait_for(lambda: epoch in self._released, timeout):
                entered = self._barrier_entries.get(epoch, set())
                missing = sorted(set(range(self.world_size)) - entered) if self.rank == 0 else "unknown"
                raise BarrierTimeoutError(f"rank {self.rank}: barrier {epoch} timed out; missing ranks {missing}")
            self._released.discard(epoch)
            self._barrier_entries.pop(epoch, None)

    def snapshot(self) -> Snapshot:
        self.device.synchronize()
        self.device.flush_activity()
        if self.profiler is None:
            return Snapshot(rank=self.rank)
        return self.profiler.snapshot()

    def reduce_profiles(self, root: int = 0, timeout: float = 60.0) -> Snapshot | None:
        """Gather every rank's snapshot at ``root`` and fold them.

        Returns the merged snapshot on the root and ``None`` elsewhere.  The
        root also keeps the per-rank snapshots in ``rank_snapshots``.
        """
        epoch = self._reduce_epoch
        self._reduce_epoch += 1
        local = self.snapshot()
        if self.rank != root:
            self.transport.send(root, FRAME_SNAPSHOT, encode_snapshot_frame(epoch, local))
            return None
        expected = self.world_size - 1
        with self._cv:
            got = self._cv.wait_for(lambda: len(self._inbox.get(epoch, {})) >= expected, timeout)
            received = self._inbox.pop(epoch, {})
        if not got:
            missing = sorted(set(range(self.world_size)) - set(received) - {self.rank})
            raise ReductionTimeoutError(missing)
        per_rank = {self.rank: local, **received}
        self.rank_snapshots = dict(sorted(per_rank.items()))
        merged = Snapshot()
        for snap in self.rank_snapshots.values():
            merged = merge_profiles(merged, snap)
        return merged

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.profiler is not None:
            self.profiler.stop_monitor()
        self.device.shutdown()
        self.runtime.shutdown()
        self.transport.close()


class World:
    """All localities of a run hosted in this process."""

    def __init__(self, size: int, transport: str = "inproc", **locality_kwargs: Any):
        if size < 1:
            raise ValueError("world size must be >= 1")
        self.size = size
        if transport == "inproc":
            hub = InProcHub(size)
            endpoints = [hub.endpoint(r) for r in range(size)]
        elif transport == "tcp":
            endpoints = [TcpTransport(r) for r in range(size)]
            peers = [t.address for t in endpoints]
            for t in endpoints:
                t.set_peers(peers)
        else:
            raise ValueError(f"unknown transport {transport!r}")
        self.localities = [Locality(r, size, endpoints[r], **locality_kwargs) for r in range(size)]

    def __getitem__(self, rank: int) -> Locality:
        return self.localities[rank]

    def __iter__(self):
        return iter(self.localities)

    def run(self, fn: Callable[[Locality], Any]) -> list[Any]:
        """Call ``fn(locality)`` for every rank concurrently; re-raises the first error."""
        results: list[Any] = [None] * self.size
        errors: list[BaseException | None] = [None] * self.size

        def body(loc: Locality) -> None:
            try:
                results[loc.rank] = fn(loc)
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors[loc.rank] = exc

        threads = [threading.Thread(target=body, args=(loc,), daemon=True) for loc in self.localities]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for exc in errors:
            if exc is not None:
                raise exc
        return results

    def reduce(self, root: int = 0) -> Snapshot:
        return self.run(lambda loc: loc.reduce_profiles(root))[root]

    def close(self) -> None:
        for loc in self.localities:
            loc.close()

    def __enter__(self) -> "World":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()


def connect_tcp(rank: int, peers: Sequence[tuple[str, int]], **locality_kwargs: Any) -> Locality:
    """Create this process's locality of a multi-process TCP world."""
    host, port = peers[rank]
    transport = TcpTransport(rank, host, port)
    transport.set_peers(list(peers))
    return Locality(rank, len(peers), transport, **locality_kwargs)
