"""The mini-stepper: per-sub-grid task phases, ghost exchange and device kernels."""

from __future__ import annotations

import itertools
import random
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..device import DeviceConfig
from ..distrib import Locality, World
from ..profiler import ProfilerConfig
from ..snapshot import Snapshot
from ..tasking import make_promise
from .config import REMOTE_ACTION, WorkloadConfig
from .mesh import Mesh, SubGrid, build_mesh, cell_values, face_of, opposite

# task names
EXECUTE_STEP = "execute_step"
COLLECT_HYDRO_BOUNDARIES = "collect_hydro_boundaries"
COMPUTE_FLUXES = "compute_fluxes"
SET_HYDRO_BOUNDARY = "set_hydro_boundary"
CHECK_FOR_REFINEMENT = "check_for_refinement"
REGRID_GATHER = "regrid_gather"
REGRID_SCATTER = "regrid_scatter"

# kernel names
RECONSTRUCT_KERNEL = "reconstruct_kernel"
FLUX_KERNEL = "flux_kernel"
MULTIPOLE_KERNEL = "multipole_kernel"
MULTIPOLE_ROOT_KERNEL = "multipole_root_kernel"
P2P_KERNEL = "p2p_kernel"
P2M_KERNEL = "p2m_kernel"

TASK_NAMES = (
    EXECUTE_STEP, COLLECT_HYDRO_BOUNDARIES, COMPUTE_FLUXES, SET_HYDRO_BOUNDARY,
    CHECK_FOR_REFINEMENT, REGRID_GATHER, REGRID_SCATTER,
)
KERNEL_NAMES = (
    RECONSTRUCT_KERNEL, FLUX_KERNEL, MULTIPOLE_KERNEL, MULTIPOLE_ROOT_KERNEL, P2P_KERNEL, P2M_KERNEL,
)

# target grid, source grid, direction, step, hydro iteration
_GHOST_HEADER = struct.Struct("<IIBII")


def gravity_kernel(mesh: Mesh, g: SubGrid) -> str:
    if g.refined:
        return MULTIPOLE_ROOT_KERNEL if g.is_root else MULTIPOLE_KERNEL
    return P2M_KERNEL if mesh.has_refined_neighbor(g) else P2P_KERNEL


def kernel_duration_ns(seed: int, grid_id: int, kernel: str, lo: int, hi: int) -> int:
    """Duration drawn once per (kernel, sub-grid) and reused every step."""
    return random.Random(f"{seed}:{grid_id}:{kernel}").randint(lo, hi)


@dataclass(frozen=True)
class ScalingPoint:
    n: int
    total_time_s: float
    cells_per_subgrid: int
    num_subgrids: int
    num_steps: int
    speedup: float = 1.0

    def __post_init__(self) -> None:
        if self.total_time_s <= 0:
            raise ValueError("total time must be positive")

    @property
    def cells_per_second(self) -> float:
        return cells_per_second(self.cells_per_subgrid, self.num_subgrids, self.num_steps, self.total_time_s)


def cells_per_second(cells_per_subgrid: int, num_subgrids: int, num_steps: int, seconds: float) -> float:
    return cells_per_subgrid * num_subgrids * num_steps / seconds


class _Slots:
    """Promise per key, created by whichever side touches it first."""

    def __init__(self, runtime=None):
        self._runtime = runtime
        self._lock = threading.Lock()
        self._slots: dict[Any, tuple] = {}

    def get(self, key):
        with self._lock:
            slot = self._slots.get(key)
            if slot is None:
                slot = self._slots[key] = make_promise(self._runtime)
            return slot

    def pop(self, key) -> None:
        with self._lock:
            self._slots.pop(key, None)


class StepRunner:
    """Drives the owned sub-grids of one locality through the time steps."""

    def __init__(self, locality: Locality, mesh: Mesh, config: WorkloadConfig, record_ghosts: bool = False):
        self.locality = locality
        self.mesh = mesh
        self.config = config
        self.step_config = config.step
        self.rank = locality.rank
        self.owned = mesh.owned(self.rank)
        self.record_ghosts = record_ghosts
        # (grid, step, it) -> {direction: ghost bytes}
        self.ghost_history: dict[tuple[int, int, int], dict[int, bytes]] = {}
        self.ghosts: dict[int, dict[int, np.ndarray]] = {g.grid_id: {} for g in self.owned}
        self._streams = itertools.count()
        self._lock = threading.Lock()
        # parcel-delivered ghosts: arrival counts and readiness promises
        self._arrived: dict[tuple[int, int, int], int] = {}
        self._pending_ghosts: dict[tuple[int, int, int], dict[int, np.ndarray]] = {}
        self._remote_ready = _Slots(locality.runtime)
        # faces published for direct local reads; no runtime hold so that a
        # neighbor that never publishes shows up as a deadlock
        self._published = _Slots(None)
        self._durations: dict[tuple[int, str], int] = {}
        lo, hi = self.step_config.kernel_duration_range_ns
        for g in self.owned:
            g.cells = cell_values(g.grid_id, 0, g.N)
            for name in (RECONSTRUCT_KERNEL, FLUX_KERNEL, gravity_kernel(mesh, g)):
                self._durations[(g.grid_id, name)] = kernel_duration_ns(self.step_config.seed, g.grid_id, name, lo, hi)
        locality.register_action(SET_HYDRO_BOUNDARY, self._set_hydro_boundary)

    # -- communication -------------------------------------------------

    def _via_parcel(self, g: SubGrid, nb: int) -> bool:
        if self.step_config.comm_mode == REMOTE_ACTION:
            return True
        return self.mesh.grids[nb].owner != g.owner

    def _expected_parcels(self, g: SubGrid) -> int:
        return sum(self._via_parcel(g, nb) for nb in g.neighbor_ids.values())

    def _set_hydro_boundary(self, payload: bytes) -> bytes:
        target, source, direction, step, it = _GHOST_HEADER.unpack_from(payload)
        face = np.frombuffer(payload, dtype=np.float64, offset=_GHOST_HEADER.size)
        g = self.mesh.grids[target]
        key = (target, step, it)
        with self._lock:
            # ghosts are keyed per iteration, so an early arrival for a later
            # iteration never overwrites one still being read
            self._pending_ghosts.setdefault(key, {})[direction] = face.reshape(g.N, g.N).copy()
            count = self._arrived.get(key, 0) + 1
            self._arrived[key] = count
        if count == self._expected_parcels(g):
            promise, _ = self._remote_ready.get(key)
            promise.fulfill(None)
        return b""

    async def _collect_hydro_boundaries(self, g: SubGrid, step: int, it: int) -> None:
        faces = {d: face_of(g.cells, d) for d in g.neighbor_ids}
        # faces[d] is what the neighbor in direction d needs
        promise, _ = self._published.get((g.grid_id, step, it))
        promise.fulfill(faces)
        loc = self.locality
        for d, nb in sorted(g.neighbor_ids.items()):
            if not self._via_parcel(g, nb):
                continue
            # the neighbor stores it as its ghost on the face pointing back at us
            header = _GHOST_HEADER.pack(nb, g.grid_id, opposite(d), step, it)
            loc.remote_action(self.mesh.grids[nb].owner, SET_HYDRO_BOUNDARY, header + faces[d].tobytes())

    async def _compute_fluxes(self, g: SubGrid, step: int, it: int) -> None:
        key = (g.grid_id, step, it)
        ghosts = self.ghosts[g.grid_id]
        if self._expected_parcels(g):
            _, ready = self._remote_ready.get(key)
            await ready
            self._remote_ready.pop(key)
            with self._lock:
                ghosts.update(self._pending_ghosts.pop(key))
                del self._arrived[key]
        for d, nb in sorted(g.neighbor_ids.items()):
            if self._via_parcel(g, nb):
                continue
            _, published = self._published.get((nb, step, it))
            faces = await published
            ghosts[d] = faces[opposite(d)]
        if self.record_ghosts:
            self.ghost_history[key] = {d: ghosts[d].tobytes() for d in sorted(ghosts)}
        await self._kernel(g, RECONSTRUCT_KERNEL)
        await self._kernel(g, FLUX_KERNEL)
        version = step * self.step_config.hydro_iterations_per_step + it + 1
        g.cells = cell_values(g.grid_id, version, g.N)

    def _kernel(self, g: SubGrid, name: str):
        stream = next(self._streams) % self.config.stream_count
        return self.locality.device.launch_kernel(name, stream, self._durations[(g.grid_id, name)])

    async def _execute_step(self, g: SubGrid, step: int) -> None:
        rt = self.locality.runtime
        sc = self.step_config
        for it in range(sc.hydro_iterations_per_step):
            await rt.spawn(self._collect_hydro_boundaries, g, step, it, name=COLLECT_HYDRO_BOUNDARIES)
            await rt.spawn(self._compute_fluxes, g, step, it, name=COMPUTE_FLUXES)
        kernel = gravity_kernel(self.mesh, g)
        for _ in range(sc.gravity_iterations_per_step):
            await self._kernel(g, kernel)

    # -- driving -------------------------------------------------------

    def run_step(self, step: int, timeout: float | None = 300.0) -> float:
        """Run one time step on this locality; returns its wall seconds."""
        rt = self.locality.runtime
        t0 = time.perf_counter()
        roots = [(EXECUTE_STEP, self._execute_step, g, step) for g in self.owned]
        if roots:
            rt.run_until_idle(*roots, timeout=timeout)
        # deliver this step's device records inside the timed region, so the
        # cost of consuming them counts as profiling overhead
        self.locality.device.flush_activity()
        # every locality has finished the step before anyone starts the next
        self.locality.barrier(timeout=timeout or 300.0)
        self._drop_published(step)
        return time.perf_counter() - t0

    def _drop_published(self, step: int) -> None:
        for g in self.owned:
            for it in range(self.step_config.hydro_iterations_per_step):
                self._published.pop((g.grid_id, step, it))

    def regrid(self) -> None:
        """Fixed-cost regridding tasks, run once outside the timed region."""
        rt = self.locality.runtime

        async def noop() -> None:
            return None

        rt.run_until_idle(
            (CHECK_FOR_REFINEMENT, noop), (REGRID_GATHER, noop), (REGRID_SCATTER, noop),
        )


@dataclass
class BenchmarkResult:
    point: ScalingPoint
    step_times_s: list[float]
    merged: Snapshot | None
    rank_snapshots: dict[int, Snapshot]
    parcels_sent: int
    parcels_by_action: dict[str, int]
    completed_counts: dict[str, int]
    ghost_history: dict[tuple[int, int, int], dict[int, bytes]] = field(default_factory=dict)


def run_locality(locality: Locality, mesh: Mesh, config: WorkloadConfig,
                 record_ghosts: bool = False) -> tuple[float, list[float], StepRunner]:
    """Run every step on one locality; returns (computation seconds, step times, runner).

    Mesh construction and regridding happen before the clock starts.
    """
    runner = StepRunner(locality, mesh, config, record_ghosts=record_ghosts)
    runner.regrid()
    locality.barrier()
    t0 = time.perf_counter()
    steps = [runner.run_step(s) for s in range(config.step.num_steps)]
    elapsed = time.perf_counter() - t0
    return elapsed, steps, runner


def run_benchmark(config: WorkloadConfig, world: World, mesh: Mesh | None = None,
                  record_ghosts: bool = False, reduce: bool = True) -> BenchmarkResult:
    """Run the workload on every locality of ``world`` and time the computation."""
    if mesh is None:
        mesh = build_mesh(config.levels, world.size, config.step.seed, config.refine_probability, config.N)
    if mesh.world_size != world.size:
        raise ValueError("mesh was partitioned for a different world size")
    for g in mesh.grids:
        g.cells = None

    def body(loc: Locality):
        elapsed, steps, runner = run_locality(loc, mesh, config, record_ghosts)
        merged = loc.reduce_profiles() if reduce else None
        return elapsed, steps, runner, merged

    results = world.run(body)
    elapsed, steps, _, merged = results[0]
    history: dict = {}
    for _, _, runner, _ in results:
        history.update(runner.ghost_history)
    sent: dict[str, int] = {}
    completed: dict[str, int] = {}
    for loc in world:
        for k, v in loc.stats.parcels_sent.items():
            sent[k] = sent.get(k, 0) + v
        for k, v in loc.runtime.completed_counts.items():
            completed[k] = completed.get(k, 0) + v
    point = ScalingPoint(world.size, elapsed, config.cells_per_subgrid, len(mesh), config.step.num_steps)
    return BenchmarkResult(
        point=point,
        step_times_s=steps,
        merged=merged,
        rank_snapshots=dict(world[0].rank_snapshots) if reduce else {},
        parcels_sent=sum(sent.values()),
        parcels_by_action=dict(sorted(sent.items())),
        completed_counts=dict(sorted(completed.items())),
        ghost_history=history,
    )


def make_world(config: WorkloadConfig, n: int, profiler_config: ProfilerConfig | None = None,
               transport: str = "inproc") -> World:
    return World(
        n, transport,
        workers=config.workers,
        seed=config.step.seed,
        profiler_config=profiler_config,
        device_config=DeviceConfig(stream_count=config.stream_count, kernel_slots=config.kernel_slots),
    )


def benchmark(config: WorkloadConfig, n: int = 1, profiler_config: ProfilerConfig | None = None,
              transport: str = "inproc", mesh: Mesh | None = None, record_ghosts: bool = False) -> BenchmarkResult:
    """Build a world of ``n`` localities, run the workload and tear the world down."""
    with make_world(config, n, profiler_config, transport) as world:
        return run_benchmark(config, world, mesh=mesh, record_ghosts=record_ghosts)
