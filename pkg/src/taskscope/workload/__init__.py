from .config import COMM_MODES, DIRECT_LOCAL, REMOTE_ACTION, ConfigError, StepConfig, WorkloadConfig, load_config, parse_config
from .mesh import Mesh, SubGrid, build_mesh, cell_values, face_of, line_mesh, opposite
from .stepper import (
    KERNEL_NAMES,
    TASK_NAMES,
    BenchmarkResult,
    ScalingPoint,
    StepRunner,
    benchmark,
    cells_per_second,
    gravity_kernel,
    kernel_duration_ns,
    make_world,
    run_benchmark,
    run_locality,
)

__all__ = [
    "BenchmarkResult",
    "COMM_MODES",
    "ConfigError",
    "DIRECT_LOCAL",
    "KERNEL_NAMES",
    "Mesh",
    "REMOTE_ACTION",
    "ScalingPoint",
    "StepConfig",
    "StepRunner",
    "SubGrid",
    "TASK_NAMES",
    "WorkloadConfig",
    "benchmark",
    "build_mesh",
    "cell_values",
    "cells_per_second",
    "face_of",
    "gravity_kernel",
    "kernel_duration_ns",
    "line_mesh",
    "load_config",
    "make_world",
    "opposite",
    "parse_config",
    "run_benchmark",
    "run_locality",
]
