"""Measurement records and the profile snapshot that carries them.

A :class:`Snapshot` is the immutable unit passed between the profiler, the
distributed reduction and the exporters.  Every list inside a snapshot is kept
in canonical order so that :func:`merge_profiles` is associative and
commutative field for field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable

MERGED_RANK = -1


@dataclass
class FlatProfileEntry:
    name: str
    calls: int = 0
    total_active_ns: int = 0
    min_ns: int = 0
    max_ns: int = 0
    total_yields: int = 0

    @property
    def mean_ns(self) -> float:
        return self.total_active_ns / self.calls if self.calls else 0.0

    def record(self, active_ns: int, yields: int = 0) -> None:
        if self.calls == 0:
            self.min_ns = self.max_ns = active_ns
        else:
            self.min_ns = min(self.min_ns, active_ns)
            self.max_ns = max(self.max_ns, active_ns)
        self.calls += 1
        self.total_active_ns += active_ns
        self.total_yields += yields

    def merged(self, other: "FlatProfileEntry") -> "FlatProfileEntry":
        return FlatProfileEntry(
            self.name,
            self.calls + other.calls,
            self.total_active_ns + other.total_active_ns,
            min(self.min_ns, other.min_ns),
            max(self.max_ns, other.max_ns),
            self.total_yields + other.total_yields,
        )

    def copy(self) -> "FlatProfileEntry":
        return replace(self)


@dataclass
class CounterStats:
    """Running aggregate of one counter.

    ``total`` is an exact rational so that merging in any order gives
    bit-identical means.
    """

    name: str
    count: int = 0
    min: float = math.inf
    max: float = -math.inf
    total: Fraction = Fraction(0)
    last: float = 0.0
    last_ts_ns: int = 0

    @property
    def mean(self) -> float:
        return float(self.total / self.count) if self.count else 0.0

    def record(self, value: float, ts_ns: int) -> None:
        self.count += 1
        self.min = min(self.min, value)
        self.max = max(self.max, value)
        self.total += Fraction(value)
        if ts_ns >= self.last_ts_ns or self.count == 1:
            self.last = value
            self.last_ts_ns = ts_ns

    def merged(self, other: "CounterStats") -> "CounterStats":
        mine, theirs = (self.last_ts_ns, self.last), (other.last_ts_ns, other.last)
        last_ts, last = max(mine, theirs)
        return CounterStats(
            self.name,
            self.count + other.count,
            min(self.min, other.min),
            max(self.max, other.max),
            self.total + other.total,
            last,
            last_ts,
        )

    def copy(self) -> "CounterStats":
        return replace(self)


@dataclass(frozen=True)
class CounterSample:
    name: str
    ts_ns: int
    value: float
    rank: int = 0

    def sort_key(self) -> tuple:
        return (self.rank, self.name, self.ts_ns, self.value)


@dataclass(frozen=True)
class ScatterSample:
    name: str
    start_ns: int
    duration_ns: int
    rank: int = 0
    guid: int = 0

    def sort_key(self) -> tuple:
        return (self.rank, self.name, self.start_ns, self.duration_ns, self.guid)


@dataclass(frozen=True)
class TraceSegment:
    """One contiguous active interval of a task on one worker."""

    name: str
    guid: int
    parent_guid: int
    worker: int
    start_ns: int
    end_ns: int
    rank: int = 0

    def sort_key(self) -> tuple:
        return (self.rank, self.worker, self.start_ns, self.end_ns, self.guid, self.name, self.parent_guid)


class ActivityKind(str, Enum):
    KERNEL = "kernel"
    COPY_H2D = "copy_host_to_device"
    COPY_D2H = "copy_device_to_host"
    COPY_D2D = "copy_device_to_device"
    ALLOC = "alloc"
    FREE = "free"

    @property
    def is_copy(self) -> bool:
        return self.value.startswith("copy_")


@dataclass(frozen=True)
class ActivityRecord:
    kind: ActivityKind
    name: str
    device_id: int
    stream_id: int
    start_ns: int
    end_ns: int
    bytes: int | None = None
    correlation_guid: int = 0
    rank: int = 0

    @property
    def duration_ns(self) -> int:
        return self.end_ns - self.start_ns

    def sort_key(self) -> tuple:
        return (
            self.rank,
            self.device_id,
            self.stream_id,
            self.start_ns,
            self.end_ns,
            self.kind.value,
            self.name,
            -1 if self.bytes is None else self.bytes,
            self.correlation_guid,
        )


@dataclass
class Snapshot:
    rank: int = 0
    profile: dict[str, FlatProfileEntry] = field(default_factory=dict)
    device_profile: dict[str, FlatProfileEntry] = field(default_factory=dict)
    provisional: dict[str, FlatProfileEntry] = field(default_factory=dict)
    counters: dict[str, CounterStats] = field(default_factory=dict)
    counter_samples: list[CounterSample] = field(default_factory=list)
    scatter: list[ScatterSample] = field(default_factory=list)
    edges: dict[tuple[str, str], int] = field(default_factory=dict)
    segments: list[TraceSegment] = field(default_factory=list)
    activities: list[ActivityRecord] = field(default_factory=list)
    diagnostics: dict[str, int] = field(default_factory=dict)

    def canonicalize(self) -> "Snapshot":
        """Sort every container into canonical order (in place)."""
        self.profile = dict(sorted(self.profile.items()))
        self.device_profile = dict(sorted(self.device_profile.items()))
        self.provisional = dict(sorted(self.provisional.items()))
        self.counters = dict(sorted(self.counters.items()))
        self.edges = dict(sorted(self.edges.items()))
        self.diagnostics = dict(sorted(self.diagnostics.items()))
        self.counter_samples.sort(key=CounterSample.sort_key)
        self.scatter.sort(key=ScatterSample.sort_key)
        self.segments.sort(key=TraceSegment.sort_key)
        self.activities.sort(key=ActivityRecord.sort_key)
        return self

    @property
    def is_empty(self) -> bool:
        return not (
            self.profile
            or self.device_profile
            or self.provisional
            or self.counters
            or self.counter_samples
            or self.scatter
            or self.edges
            or self.segments
            or self.activities
            or self.diagnostics
        )


def _merge_map(a: dict, b: dict) -> dict:
    out = {k: v.copy() for k, v in a.items()}
    for k, v in b.items():
        out[k] = out[k].merged(v) if k in out else v.copy()
    return out


def _sum_map(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + v
    return out


def merge_profiles(a: Snapshot, b: Snapshot) -> Snapshot:
    """Combine two snapshots; associative, commutative, empty is identity."""
    # the default empty snapshot is the identity; any other rank mismatch
    # marks the result as combined
    if a.is_empty and a.rank == 0:
        rank = b.rank
    elif b.is_empty and b.rank == 0:
        rank = a.rank
    else:
        rank = a.rank if a.rank == b.rank else MERGED_RANK
    merged = Snapshot(
        rank=rank,
        profile=_merge_map(a.profile, b.profile),
        device_profile=_merge_map(a.device_profile, b.device_profile),
        provisional=_merge_map(a.provisional, b.provisional),
        counters=_merge_map(a.counters, b.counters),
        counter_samples=a.counter_samples + b.counter_samples,
        scatter=a.scatter + b.scatter,
        edges=_sum_map(a.edges, b.edges),
        segments=a.segments + b.segments,
        activities=a.activities + b.activities,
        diagnostics=_sum_map(a.diagnostics, b.diagnostics),
    )
    return merged.canonicalize()


def merge_all(snapshots: Iterable[Snapshot]) -> Snapshot:
    out = Snapshot()
    for s in snapshots:
        out = merge_profiles(out, s)
    return out
