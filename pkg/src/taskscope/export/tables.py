"""CSV flat-profile and scatter tables."""

from __future__ import annotations

import csv
import os
from typing import Iterable

from ..snapshot import FlatProfileEntry, ScatterSample, Snapshot

PROFILE_COLUMNS = ["rank", "name", "calls", "total_ns", "mean_ns", "min_ns", "max_ns", "yields"]
SCATTER_COLUMNS = ["rank", "name", "start_ns", "duration_ns"]

# device-side entries share the profile table under this prefix
DEVICE_PREFIX = "GPU: "


class TableError(ValueError):
    pass


def _as_list(snapshots: Snapshot | Iterable[Snapshot]) -> list[Snapshot]:
    return [snapshots] if isinstance(snapshots, Snapshot) else list(snapshots)


def _entry_row(rank: int, name: str, e: FlatProfileEntry) -> list:
    return [rank, name, e.calls, e.total_active_ns, repr(e.mean_ns), e.min_ns, e.max_ns, e.total_yields]


def write_profile_csv(snapshots: Snapshot | Iterable[Snapshot], path: str | os.PathLike) -> int:
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for snap in _as_list(snapshots):
            for name, e in snap.profile.items():
                w.writerow(_entry_row(snap.rank, name, e))
                rows += 1
            for name, e in snap.device_profile.items():
                w.writerow(_entry_row(snap.rank, DEVICE_PREFIX + name, e))
                rows += 1
    return rows


def write_scatter_csv(snapshots: Snapshot | Iterable[Snapshot], path: str | os.PathLike) -> int:
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCATTER_COLUMNS)
        for snap in _as_list(snapshots):
            for s in snap.scatter:
                w.writerow([s.rank, s.name, s.start_ns, s.duration_ns])
                rows += 1
    return rows


def _read(path: str | os.PathLike, columns: list[str]) -> list[dict[str, str]]:
    try:
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != columns:
                raise TableError(f"{path}: expected columns {columns}, got {reader.fieldnames}")
            return list(reader)
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise TableError(f"{path}: {exc}") from exc


def read_profile_csv(path: str | os.PathLike) -> dict[int, Snapshot]:
    """Parse a profile table back into per-rank snapshots (profiles only)."""
    out: dict[int, Snapshot] = {}
    for line, row in enumerate(_read(path, PROFILE_COLUMNS), start=2):
        try:
            rank = int(row["rank"])
            entry = FlatProfileEntry(
                row["name"], int(row["calls"]), int(row["total_ns"]),
                int(row["min_ns"]), int(row["max_ns"]), int(row["yields"]),
            )
        except (TypeError, ValueError) as exc:
            raise TableError(f"{path}:{line}: {exc}") from exc
        if entry.calls < 1:
            raise TableError(f"{path}:{line}: calls must be >= 1")
        snap = out.setdefault(rank, Snapshot(rank=rank))
        if entry.name.startswith(DEVICE_PREFIX):
            entry.name = entry.name[len(DEVICE_PREFIX):]
            snap.device_profile[entry.name] = entry
        else:
            snap.profile[entry.name] = entry
    return out


def read_scatter_csv(path: str | os.PathLike) -> list[ScatterSample]:
    out = []
    for line, row in enumerate(_read(path, SCATTER_COLUMNS), start=2):
        try:
            out.append(ScatterSample(row["name"], int(row["start_ns"]), int(row["duration_ns"]), int(row["rank"])))
        except (TypeError, ValueError) as exc:
            raise TableError(f"{path}:{line}: {exc}") from exc
    return out
