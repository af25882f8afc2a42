"""Profiling overhead experiments and locality scaling sweeps."""

from __future__ import annotations

import csv
import dataclasses
import gc
import io
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence, TextIO

from .profiler import ProfilerConfig
from .workload import WorkloadConfig, benchmark, build_mesh, cells_per_second

log = logging.getLogger(__name__)

# experiment arms, from least to most instrumentation
ABSENT = "absent"
DISABLED = "disabled"
CPU_ONLY = "cpu_only"
FULL = "full"
ARMS = (ABSENT, DISABLED, CPU_ONLY, FULL)

OVERHEAD_COLUMNS = ("n", "comparison", "comp_apex_s", "comp_no_apex_s", "o_percent")
SWEEP_COLUMNS = (
    "n", "time_with", "time_without", "cells_per_second_with", "cells_per_second_without",
    "o_percent", "speedup_with", "speedup_without",
)


class HarnessError(RuntimeError):
    pass


def compute_overhead(comp_apex_s: float, comp_no_apex_s: float) -> float:
    """Percent slowdown of the profiled run relative to the unprofiled one.

    Evaluated in exact rational arithmetic on the two doubles and rounded
    once at the end, so the only error is the final conversion.
    """
    if not comp_no_apex_s > 0:
        raise ValueError(f"baseline time must be positive, got {comp_no_apex_s!r}")
    if comp_apex_s < 0:
        raise ValueError(f"time must be non-negative, got {comp_apex_s!r}")
    return float(Fraction(comp_apex_s) / Fraction(comp_no_apex_s) * 100 - 100)


@dataclass(frozen=True)
class OverheadReport:
    n: int
    comp_apex_s: float
    comp_no_apex_s: float
    o_percent: float

    @classmethod
    def from_times(cls, n: int, comp_apex_s: float, comp_no_apex_s: float) -> "OverheadReport":
        return cls(n, comp_apex_s, comp_no_apex_s, compute_overhead(comp_apex_s, comp_no_apex_s))


def arm_profiler_config(arm: str, base: ProfilerConfig | None = None) -> ProfilerConfig | None:
    """Profiler settings of one arm; ``None`` means no profiler is installed."""
    base = base or ProfilerConfig()
    if arm == ABSENT:
        return None
    if arm == DISABLED:
        return dataclasses.replace(base, enabled=False)
    if arm == CPU_ONLY:
        return dataclasses.replace(base, enabled=True, device_activity=False)
    if arm == FULL:
        return dataclasses.replace(base, enabled=True, device_activity=True)
    raise ValueError(f"unknown arm {arm!r}")


@dataclass(frozen=True)
class ArmResult:
    seconds: float
    completed_counts: dict[str, int] = field(default_factory=dict)


# (config, locality count, arm) -> measured computation time
ArmRunner = Callable[[WorkloadConfig, int, str], ArmResult]


def run_arm(config: WorkloadConfig, n: int, arm: str) -> ArmResult:
    mesh = build_mesh(config.levels, n, config.step.seed, config.refine_probability, config.N)
    # start every arm from a collected heap so earlier garbage is not billed to it
    gc.collect()
    result = benchmark(config, n, arm_profiler_config(arm), mesh=mesh)
    return ArmResult(result.point.total_time_s, result.completed_counts)


@dataclass
class OverheadExperiment:
    """Minimum computation time per arm plus the derived overheads."""

    n: int
    repetitions: int
    times: dict[str, list[float]]
    dag_identical: bool

    def best(self, arm: str) -> float:
        return min(self.times[arm])

    def report(self, profiled: str = FULL, baseline: str = DISABLED) -> OverheadReport:
        return OverheadReport.from_times(self.n, self.best(profiled), self.best(baseline))

    @property
    def main(self) -> OverheadReport:
        """Full capture against the disabled profiler."""
        return self.report(FULL, DISABLED)

    @property
    def cpu_only(self) -> OverheadReport:
        return self.report(CPU_ONLY, DISABLED)

    @property
    def intrusion(self) -> OverheadReport:
        """Disabled profiler against no profiler at all."""
        return self.report(DISABLED, ABSENT)

    def rows(self) -> list[tuple[str, OverheadReport]]:
        return [
            ("full_vs_disabled", self.main),
            ("cpu_only_vs_disabled", self.cpu_only),
            ("disabled_vs_absent", self.intrusion),
        ]


def _task_counts(counts: dict[str, int]) -> dict[str, int]:
    # the parcel receive timer only exists when a profiler records it
    return {k: v for k, v in counts.items() if k != "schedule_parcel"}


def run_overhead_experiment(config: WorkloadConfig, n: int = 1, repetitions: int = 3,
                            arms: Sequence[str] = ARMS, runner: ArmRunner = run_arm) -> OverheadExperiment:
    """Run every arm ``repetitions`` times, interleaved, and keep per-arm minima.

    Interleaving spreads slow drifts of the machine evenly over the arms.
    The arms run one after another, never concurrently.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    missing = {DISABLED, FULL} - set(arms)
    if missing:
        raise ValueError(f"arms must include {sorted(missing)}")
    times: dict[str, list[float]] = {arm: [] for arm in arms}
    reference: dict[str, int] | None = None
    identical = True
    for rep in range(repetitions):
        for arm in arms:
            result = runner(config, n, arm)
            times[arm].append(result.seconds)
            log.info("rep %d arm %s: %.6f s", rep, arm, result.seconds)
            if result.completed_counts:
                counts = _task_counts(result.completed_counts)
                if reference is None:
                    reference = counts
                elif counts != reference:
                    identical = False
    return OverheadExperiment(n, repetitions, times, identical)


@dataclass(frozen=True)
class SweepRow:
    n: int
    time_with: float
    time_without: float
    cells_per_second_with: float
    cells_per_second_without: float
    o_percent: float
    speedup_with: float
    speedup_without: float

    def as_tuple(self) -> tuple:
        return (self.n, self.time_with, self.time_without, self.cells_per_second_with,
                self.cells_per_second_without, self.o_percent, self.speedup_with, self.speedup_without)


def num_subgrids(config: WorkloadConfig) -> int:
    return len(build_mesh(config.levels, 1, config.step.seed, config.refine_probability, config.N))


def sweep_rows(config: WorkloadConfig, measured: Sequence[tuple[int, float, float]]) -> list[SweepRow]:
    """Rows from (n, time with profiling, time without) triples in ascending n."""
    if not measured:
        raise ValueError("no locality counts")
    subgrids = num_subgrids(config)
    base_with, base_without = measured[0][1], measured[0][2]
    rows = []
    for n, t_with, t_without in measured:
        rows.append(SweepRow(
            n=n,
            time_with=t_with,
            time_without=t_without,
            cells_per_second_with=cells_per_second(config.cells_per_subgrid, subgrids, config.step.num_steps, t_with),
            cells_per_second_without=cells_per_second(config.cells_per_subgrid, subgrids, config.step.num_steps, t_without),
            o_percent=compute_overhead(t_with, t_without),
            speedup_with=base_with / t_with,
            speedup_without=base_without / t_without,
        ))
    return rows


def run_scaling_sweep(config: WorkloadConfig, counts: Iterable[int], repetitions: int = 1,
                      runner: ArmRunner = run_arm) -> list[SweepRow]:
    """Time the fixed mesh at each locality count with and without profiling.

    Speedups are taken against the smallest count, separately per arm.
    """
    counts = list(counts)
    if not counts:
        raise ValueError("counts must be non-empty")
    if counts != sorted(set(counts)) or counts[0] < 1:
        raise ValueError("counts must be positive and strictly ascending")
    measured = []
    for n in counts:
        exp = run_overhead_experiment(config, n, repetitions, arms=(DISABLED, FULL), runner=runner)
        measured.append((n, exp.best(FULL), exp.best(DISABLED)))
    return sweep_rows(config, measured)


def _fmt(v) -> str:
    return repr(v) if isinstance(v, float) else str(v)


def write_sweep_csv(rows: Sequence[SweepRow], out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in row.as_tuple()])


def write_overhead_csv(exp: OverheadExperiment, out: TextIO) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(OVERHEAD_COLUMNS)
    for label, rep in exp.rows():
        w.writerow([rep.n, label, _fmt(rep.comp_apex_s), _fmt(rep.comp_no_apex_s), _fmt(rep.o_percent)])


def sweep_csv_text(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != SWEEP_COLUMNS:
        raise HarnessError(f"unexpected sweep header {header}")
    return [SweepRow(int(r[0]), *(float(x) for x in r[1:])) for r in reader]
