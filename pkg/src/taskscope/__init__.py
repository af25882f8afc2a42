"""Task-aware profiling for an asynchronous many-task runtime.

Subpackages and modules:

- ``tasking``: cooperative multi-worker scheduler with promises and futures
- ``profiler``: yield/resume-aware task timers, counters and sampling
- ``device``: simulated accelerator with streams and buffered activity records
- ``distrib``: localities, parcels, barriers and profile reduction
- ``export``: trace JSON, CSV tables, DOT graphs, binary codec, profile diffs
- ``workload``: octree mini-stepper benchmark
- ``harness``: overhead experiments and scaling sweeps
"""

from .profiler import Profiler, ProfilerConfig
from .snapshot import Snapshot, merge_all, merge_profiles
from .tasking import CompletionToken, Runtime, SchedulerConfig, make_promise, suspend_on

__version__ = "0.1.0"

__all__ = [
    "CompletionToken",
    "Profiler",
    "ProfilerConfig",
    "Runtime",
    "SchedulerConfig",
    "Snapshot",
    "make_promise",
    "merge_all",
    "merge_profiles",
    "suspend_on",
]
