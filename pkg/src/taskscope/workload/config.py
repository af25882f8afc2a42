"""Workload configuration and its key=value file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

REMOTE_ACTION = "remote_action"
DIRECT_LOCAL = "direct_local"
COMM_MODES = (REMOTE_ACTION, DIRECT_LOCAL)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StepConfig:
    num_steps: int = 40
    gravity_iterations_per_step: int = 6
    hydro_iterations_per_step: int = 3
    kernel_duration_range_ns: tuple[int, int] = (100_000, 2_000_000)
    comm_mode: str = REMOTE_ACTION
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_steps < 1:
            raise ConfigError("num_steps must be >= 1")
        if self.gravity_iterations_per_step < 1 or self.hydro_iterations_per_step < 1:
            raise ConfigError("iteration counts must be positive")
        lo, hi = self.kernel_duration_range_ns
        if lo <= 0 or lo > hi:
            raise ConfigError(f"bad kernel duration range [{lo}, {hi}]")
        if self.comm_mode not in COMM_MODES:
            raise ConfigError(f"comm_mode must be one of {COMM_MODES}, got {self.comm_mode!r}")

    @property
    def kernels_per_step(self) -> int:
        """Device launches one sub-grid issues per step."""
        return 2 * self.hydro_iterations_per_step + self.gravity_iterations_per_step


@dataclass(frozen=True)
class WorkloadConfig:
    levels: int = 2
    N: int = 8
    refine_probability: float = 0.5
    stream_count: int = 128
    workers: int = 1
    kernel_slots: int = 2
    step: StepConfig = field(default_factory=StepConfig)

    def __post_init__(self) -> None:
        if self.levels < 1:
            raise ConfigError("levels must be >= 1")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if not 0.0 <= self.refine_probability <= 1.0:
            raise ConfigError("refine_probability must be in [0, 1]")
        if self.stream_count < 1 or self.workers < 1 or self.kernel_slots < 1:
            raise ConfigError("stream_count, workers and kernel_slots must be >= 1")

    @property
    def cells_per_subgrid(self) -> int:
        return self.N ** 3

    def with_step(self, **changes) -> "WorkloadConfig":
        return dataclasses.replace(self, step=dataclasses.replace(self.step, **changes))

    def replace(self, **changes) -> "WorkloadConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, object]:
        s = self.step
        return {
            "levels": self.levels,
            "N": self.N,
            "refine_probability": self.refine_probability,
            "steps": s.num_steps,
            "hydro_iterations": s.hydro_iterations_per_step,
            "gravity_iterations": s.gravity_iterations_per_step,
            "comm_mode": s.comm_mode,
            "seed": s.seed,
            "kernel_min_ns": s.kernel_duration_range_ns[0],
            "kernel_max_ns": s.kernel_duration_range_ns[1],
            "stream_count": self.stream_count,
            "workers": self.workers,
            "kernel_slots": self.kernel_slots,
        }

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_dict().items())


_INT_KEYS = {
    "levels", "N", "steps", "hydro_iterations", "gravity_iterations", "seed",
    "kernel_min_ns", "kernel_max_ns", "stream_count", "workers", "kernel_slots",
}
_FLOAT_KEYS = {"refine_probability"}
_STR_KEYS = {"comm_mode"}


def parse_config(text: str) -> WorkloadConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are an error."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _STR_KEYS:
                values[key] = value
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None

    default = WorkloadConfig()
    d = default.step
    step = StepConfig(
        num_steps=values.get("steps", d.num_steps),
        gravity_iterations_per_step=values.get("gravity_iterations", d.gravity_iterations_per_step),
        hydro_iterations_per_step=values.get("hydro_iterations", d.hydro_iterations_per_step),
        kernel_duration_range_ns=(
            values.get("kernel_min_ns", d.kernel_duration_range_ns[0]),
            values.get("kernel_max_ns", d.kernel_duration_range_ns[1]),
        ),
        comm_mode=values.get("comm_mode", d.comm_mode),
        seed=values.get("seed", d.seed),
    )
    return WorkloadConfig(
        levels=values.get("levels", default.levels),
        N=values.get("N", default.N),
        refine_probability=values.get("refine_probability", default.refine_probability),
        stream_count=values.get("stream_count", default.stream_count),
        workers=values.get("workers", default.workers),
        kernel_slots=values.get("kernel_slots", default.kernel_slots),
        step=step,
    )


def load_config(path: str | os.PathLike) -> WorkloadConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
