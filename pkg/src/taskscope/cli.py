"""Command-line front end: ``taskscope {bench,overhead,sweep,export,diff,aggregate}``.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import socket
import subprocess
import sys
from pathlib import Path
from typing import Sequence

from . import harness
from .device import DeviceConfig
from .distrib import connect_tcp
from .export import (
    CodecError,
    TableError,
    decode_snapshot,
    diff_profiles,
    encode_snapshot,
    format_diff_table,
    read_profile_csv,
    write_profile_csv,
    write_scatter_csv,
    write_taskgraph_dot,
    write_trace_events,
)
from .profiler import ProfilerConfig
from .snapshot import Snapshot, merge_all
from .workload import ConfigError, WorkloadConfig, build_mesh, load_config, make_world, run_benchmark, run_locality

log = logging.getLogger("taskscope")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

MANIFEST = "manifest.json"
SNAPSHOT = "snapshot.bin"
PROFILE_CSV = "profile.csv"
SCATTER_CSV = "scatter.csv"
TRACE_JSON = "trace.json"
TASKGRAPH_DOT = "taskgraph.dot"
BENCH_FILES = (MANIFEST, SNAPSHOT, PROFILE_CSV, SCATTER_CSV, TRACE_JSON, TASKGRAPH_DOT)


class UsageError(Exception):
    """Bad flags or unreadable inputs; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {value}")
    return value


def _counts(text: str) -> list[int]:
    try:
        counts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad locality counts {text!r}") from None
    if not counts or counts != sorted(set(counts)) or counts[0] < 1:
        raise argparse.ArgumentTypeError("counts must be positive and strictly ascending")
    return counts


def _load(path: str | None) -> WorkloadConfig:
    if path is None:
        return WorkloadConfig()
    try:
        return load_config(path)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def _read_snapshot(path: str) -> Snapshot:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    try:
        return decode_snapshot(data)
    except CodecError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_artifacts(out: Path, merged: Snapshot, per_rank: Sequence[Snapshot]) -> None:
    (out / SNAPSHOT).write_bytes(encode_snapshot(merged))
    write_profile_csv(per_rank, out / PROFILE_CSV)
    write_scatter_csv(per_rank, out / SCATTER_CSV)
    write_trace_events(per_rank, out / TRACE_JSON)
    write_taskgraph_dot(merged, out / TASKGRAPH_DOT)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- bench ---------------------------------------------------------------


def _free_ports(count: int) -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket()
            s.bind(("127.0.0.1", 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()


def _parse_peers(text: str) -> list[tuple[str, int]]:
    peers = []
    for item in text.split(","):
        host, _, port = item.rpartition(":")
        try:
            peers.append((host or "127.0.0.1", int(port)))
        except ValueError:
            raise UsageError(f"bad peer address {item!r}") from None
    return peers


def _profiler_config(profile: str) -> ProfilerConfig:
    return ProfilerConfig() if profile == "on" else ProfilerConfig.disabled()


def _manifest(args, config: WorkloadConfig, timings: dict) -> dict:
    return {
        "command": "bench",
        "config": config.to_dict(),
        "localities": args.localities,
        "transport": args.transport,
        "profile": args.profile,
        "files": sorted(BENCH_FILES),
        "timings": timings,
    }


def _bench_tcp_rank(args, config: WorkloadConfig) -> int:
    """One process of a multi-process TCP run."""
    peers = _parse_peers(args.peers)
    if len(peers) != args.localities or not 0 <= args.rank < len(peers):
        raise UsageError("--peers must list one address per locality and --rank must index it")
    mesh = build_mesh(config.levels, len(peers), config.step.seed, config.refine_probability, config.N)
    loc = connect_tcp(
        args.rank, peers,
        workers=config.workers,
        seed=config.step.seed,
        profiler_config=_profiler_config(args.profile),
        device_config=DeviceConfig(stream_count=config.stream_count, kernel_slots=config.kernel_slots),
    )
    try:
        elapsed, steps, _ = run_locality(loc, mesh, config)
        merged = loc.reduce_profiles(root=0)
        loc.barrier()
        if args.rank == 0:
            out = Path(args.out)
            per_rank = list(loc.rank_snapshots.values())
            _write_artifacts(out, merged, per_rank)
            sent = sum(loc.stats.parcels_sent.values())
            _write_json(out / MANIFEST, _manifest(args, config, {
                "computation_s": elapsed,
                "step_times_s": steps,
                "num_subgrids": len(mesh),
                "parcels_sent_rank0": sent,
            }))
    finally:
        loc.close()
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load(args.config)
    if args.peers is not None:
        return _bench_tcp_rank(args, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.transport == "tcp":
        ports = _free_ports(args.localities)
        peers = ",".join(f"127.0.0.1:{p}" for p in ports)
        base = [sys.executable, "-m", "taskscope.cli", "bench", "--localities", str(args.localities),
                "--transport", "tcp", "--profile", args.profile, "--out", str(out), "--peers", peers]
        if args.config:
            base += ["--config", args.config]
        children = [subprocess.Popen(base + ["--rank", str(r)]) for r in range(1, args.localities)]
        args.rank = 0
        args.peers = peers
        try:
            code = _bench_tcp_rank(args, config)
        finally:
            codes = [c.wait(timeout=600) for c in children]
        if any(codes):
            log.error("locality processes exited with %s", codes)
            return EXIT_RUNTIME
        return code
    with make_world(config, args.localities, _profiler_config(args.profile)) as world:
        result = run_benchmark(config, world)
    per_rank = list(result.rank_snapshots.values())
    _write_artifacts(out, result.merged, per_rank)
    _write_json(out / MANIFEST, _manifest(args, config, {
        "computation_s": result.point.total_time_s,
        "step_times_s": result.step_times_s,
        "num_subgrids": result.point.num_subgrids,
        "cells_per_second": result.point.cells_per_second,
        "parcels_sent": result.parcels_sent,
    }))
    print(f"computation {result.point.total_time_s:.6f} s, "
          f"{result.point.cells_per_second:.1f} cells/s, outputs in {out}")
    return EXIT_OK


# -- overhead / sweep ----------------------------------------------------


def _parse_arm_times(text: str) -> dict[str, float]:
    times = {}
    for item in text.split(","):
        arm, _, value = item.partition("=")
        arm = arm.strip()
        if arm not in harness.ARMS:
            raise UsageError(f"unknown arm {arm!r} in injected times")
        try:
            times[arm] = float(value)
        except ValueError:
            raise UsageError(f"bad injected time {item!r}") from None
    missing = set(harness.ARMS) - set(times)
    if missing:
        raise UsageError(f"injected times missing arms {sorted(missing)}")
    return times


def _injected_runner(times: dict[str, float]):
    def runner(config, n, arm):
        return harness.ArmResult(times[arm])

    return runner


def cmd_overhead(args) -> int:
    config = _load(args.config)
    runner = harness.run_arm
    if args.inject_times is not None:
        runner = _injected_runner(_parse_arm_times(args.inject_times))
    exp = harness.run_overhead_experiment(config, args.localities, args.repetitions, runner=runner)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            harness.write_overhead_csv(exp, f)
    for label, rep in exp.rows():
        print(f"{label:<22} n={rep.n} with={rep.comp_apex_s:.6f}s without={rep.comp_no_apex_s:.6f}s "
              f"o={rep.o_percent:.2f}%")
    if not exp.dag_identical:
        print("warning: arms executed different task graphs", file=sys.stderr)
    return EXIT_OK


def _parse_sweep_times(text: str) -> dict[int, tuple[float, float]]:
    out = {}
    for item in text.split(","):
        try:
            n, with_s, without_s = item.split(":")
            out[int(n)] = (float(with_s), float(without_s))
        except ValueError:
            raise UsageError(f"bad injected sweep time {item!r}; expected n:with:without") from None
    return out


def cmd_sweep(args) -> int:
    config = _load(args.config)
    if args.inject_times is not None:
        times = _parse_sweep_times(args.inject_times)
        missing = [n for n in args.counts if n not in times]
        if missing:
            raise UsageError(f"injected times missing counts {missing}")
        rows = harness.sweep_rows(config, [(n, *times[n]) for n in args.counts])
    else:
        rows = harness.run_scaling_sweep(config, args.counts, args.repetitions)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            harness.write_sweep_csv(rows, f)
    else:
        harness.write_sweep_csv(rows, sys.stdout)
    return EXIT_OK


# -- export / diff / aggregate -------------------------------------------


def cmd_export(args) -> int:
    snap = _read_snapshot(args.snapshot)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_profile_csv(snap, out / PROFILE_CSV)
    write_scatter_csv(snap, out / SCATTER_CSV)
    events = write_trace_events(snap, out / TRACE_JSON)
    nodes, edges = write_taskgraph_dot(snap, out / TASKGRAPH_DOT)
    print(f"{events} trace events, {nodes} graph nodes, {edges} edges -> {out}")
    return EXIT_OK


def cmd_diff(args) -> int:
    if not args.threshold > 1:
        raise UsageError("--threshold must be > 1")
    try:
        a = merge_all(read_profile_csv(args.a).values())
        b = merge_all(read_profile_csv(args.b).values())
    except TableError as exc:
        raise UsageError(str(exc)) from None
    print(format_diff_table(diff_profiles(a, b, args.threshold)))
    return EXIT_OK


def cmd_aggregate(args) -> int:
    snaps = [_read_snapshot(p) for p in args.snapshots]
    merged = merge_all(snaps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / SNAPSHOT).write_bytes(encode_snapshot(merged))
    write_profile_csv(merged, out / PROFILE_CSV)
    print(f"merged {len(snaps)} snapshots: {len(merged.profile)} task names -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taskscope", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bench", help="run the workload and write all artifacts")
    b.add_argument("--config")
    b.add_argument("--localities", type=_positive_int, default=1)
    b.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    b.add_argument("--profile", choices=("on", "off"), default="on")
    b.add_argument("--out", required=True)
    b.add_argument("--rank", type=int, default=0, help=argparse.SUPPRESS)
    b.add_argument("--peers", help=argparse.SUPPRESS)
    b.set_defaults(func=cmd_bench)

    o = sub.add_parser("overhead", help="overhead of profiling at one locality count")
    o.add_argument("--config")
    o.add_argument("--localities", type=_positive_int, default=1)
    o.add_argument("--repetitions", type=_positive_int, default=3)
    o.add_argument("--out")
    # arm=seconds list, replaces measurement
    o.add_argument("--inject-times", help=argparse.SUPPRESS)
    o.set_defaults(func=cmd_overhead)

    s = sub.add_parser("sweep", help="scaling sweep over locality counts")
    s.add_argument("--config")
    s.add_argument("--counts", type=_counts, default=[1, 2, 4])
    s.add_argument("--repetitions", type=_positive_int, default=1)
    s.add_argument("--out")
    # n:with:without list, replaces measurement
    s.add_argument("--inject-times", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export", help="re-export a binary snapshot")
    e.add_argument("--snapshot", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export)

    d = sub.add_parser("diff", help="compare two profile tables")
    d.add_argument("--a", required=True)
    d.add_argument("--b", required=True)
    d.add_argument("--threshold", type=float, default=2.0)
    d.set_defaults(func=cmd_diff)

    a = sub.add_parser("aggregate", help="merge snapshot files")
    a.add_argument("snapshots", nargs="+")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aggregate)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"taskscope: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to one exit code
        log.debug("runtime failure", exc_info=True)
        print(f"taskscope: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
