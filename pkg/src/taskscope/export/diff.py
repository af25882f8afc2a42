"""Cross-run comparison of flat profiles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ..snapshot import FlatProfileEntry, Snapshot


@dataclass(frozen=True)
class ProfileDiffRow:
    name: str
    calls_a: int | None
    calls_b: int | None
    mean_a_ns: float | None
    mean_b_ns: float | None
    mean_ratio: float | None
    flag: bool

    @property
    def one_sided(self) -> bool:
        return self.mean_ratio is None


def _ratio(a: float, b: float) -> float:
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def diff_profiles(
    a: Snapshot | Mapping[str, FlatProfileEntry],
    b: Snapshot | Mapping[str, FlatProfileEntry],
    threshold: float = 2.0,
) -> list[ProfileDiffRow]:
    """Compare per-name means of two profiles.

    Rows present on both sides come first, ordered by how far the mean ratio
    is from 1 (in log space); rows present on only one side follow by name.
    """
    if threshold <= 1:
        raise ValueError("threshold must be > 1")
    pa = a.profile if isinstance(a, Snapshot) else a
    pb = b.profile if isinstance(b, Snapshot) else b
    both, single = [], []
    for name in sorted(set(pa) | set(pb)):
        ea, eb = pa.get(name), pb.get(name)
        if ea is not None and eb is not None:
            r = _ratio(ea.mean_ns, eb.mean_ns)
            flag = r > threshold or r < 1.0 / threshold
            both.append(ProfileDiffRow(name, ea.calls, eb.calls, ea.mean_ns, eb.mean_ns, r, flag))
        else:
            single.append(ProfileDiffRow(
                name,
                ea.calls if ea else None,
                eb.calls if eb else None,
                ea.mean_ns if ea else None,
                eb.mean_ns if eb else None,
                None,
                False,
            ))
    both.sort(key=lambda row: (-abs(math.log(row.mean_ratio)) if row.mean_ratio > 0 else -math.inf, row.name))
    return both + single


def format_diff_table(rows: list[ProfileDiffRow]) -> str:
    def cell(v, fmt):
        return "-" if v is None else format(v, fmt)

    header = f"{'name':<40} {'calls_a':>9} {'calls_b':>9} {'mean_a_us':>12} {'mean_b_us':>12} {'ratio':>8}  flag"
    out = [header, "-" * len(header)]
    for r in rows:
        ma = None if r.mean_a_ns is None else r.mean_a_ns / 1000.0
        mb = None if r.mean_b_ns is None else r.mean_b_ns / 1000.0
        mark = "one-sided" if r.one_sided else ("*" if r.flag else "")
        out.append(
            f"{r.name:<40} {cell(r.calls_a, 'd'):>9} {cell(r.calls_b, 'd'):>9} "
            f"{cell(ma, '.3f'):>12} {cell(mb, '.3f'):>12} {cell(r.mean_ratio, '.3f'):>8}  {mark}"
        )
    return "\n".join(out)
