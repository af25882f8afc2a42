"""Google Trace Events (array form) writer."""

from __future__ import annotations

import json
import os
from typing import Iterable

from ..snapshot import Snapshot

DEVICE_LANE_BASE = 10000


def device_lane(device_id: int, stream_id: int) -> int:
    """Synthetic thread id that gives each device stream its own lane."""
    return DEVICE_LANE_BASE + device_id * 1000 + stream_id


def _as_list(snapshots: Snapshot | Iterable[Snapshot]) -> list[Snapshot]:
    return [snapshots] if isinstance(snapshots, Snapshot) else list(snapshots)


def trace_events(snapshots: Snapshot | Iterable[Snapshot]) -> list[dict]:
    events = []
    for snap in _as_list(snapshots):
        for seg in snap.segments:
            events.append({
                "name": seg.name,
                "cat": "task",
                "ph": "X",
                "ts": seg.start_ns / 1000.0,
                "dur": (seg.end_ns - seg.start_ns) / 1000.0,
                "pid": seg.rank,
                "tid": seg.worker,
                "args": {"guid": seg.guid, "parent_guid": seg.parent_guid},
            })
        for rec in snap.activities:
            args = {"guid": rec.correlation_guid, "kind": rec.kind.value, "stream": rec.stream_id}
            if rec.bytes is not None:
                args["bytes"] = rec.bytes
            events.append({
                "name": rec.name,
                "cat": "device",
                "ph": "X",
                "ts": rec.start_ns / 1000.0,
                "dur": (rec.end_ns - rec.start_ns) / 1000.0,
                "pid": rec.rank,
                "tid": device_lane(rec.device_id, rec.stream_id),
                "args": args,
            })
        for s in snap.counter_samples:
            events.append({
                "name": s.name,
                "cat": "counter",
                "ph": "C",
                "ts": s.ts_ns / 1000.0,
                "pid": s.rank,
                "tid": 0,
                "args": {"value": s.value},
            })
    events.sort(key=lambda e: (e["pid"], e["tid"], e["ts"], e["ph"], e["name"], e.get("dur", 0.0)))
    return events


def write_trace_events(snapshots: Snapshot | Iterable[Snapshot], path: str | os.PathLike) -> int:
    """Write a trace-viewer loadable JSON array; returns the event count."""
    events = trace_events(snapshots)
    lines = [json.dumps(e, allow_nan=False, separators=(",", ":"), sort_keys=True) for e in events]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("[\n" + ",\n".join(lines) + ("\n" if lines else "") + "]\n")
    return len(events)
