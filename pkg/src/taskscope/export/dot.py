from __future__ import annotations

import os
from typing import Iterable

from ..snapshot import Snapshot, merge_all


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def _quote(s: str) -> str:
    return '"' + _escape(s) + '"'


def taskgraph_dot(snapshots: Snapshot | Iterable[Snapshot]) -> tuple[str, int, int]:
    snap = snapshots if isinstance(snapshots, Snapshot) else merge_all(snapshots)
    names = set(snap.profile)
    for parent, child in snap.edges:
        names.update((parent, child))
    lines = ["digraph taskgraph {", "  node [shape=box];"]
    for name in sorted(names):
        entry = snap.profile.get(name)
        label = _escape(name)
        if entry is not None:
            label += f"\\ncalls={entry.calls}\\nmean={entry.mean_ns / 1000.0:.3f} us"
        lines.append(f'  {_quote(name)} [label="{label}"];')
    edges = sorted(snap.edges.items())
    for (parent, child), count in edges:
        lines.append(f"  {_quote(parent)} -> {_quote(child)} [label=\"{count}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n", len(names), len(edges)


def write_taskgraph_dot(snapshots: Snapshot | Iterable[Snapshot], path: str | os.PathLike) -> tuple[int, int]:
    """Write the parent->child task graph; returns (node count, edge count)."""
    text, nodes, edges = taskgraph_dot(snapshots)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    return nodes, edges
