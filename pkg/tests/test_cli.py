from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from taskscope.cli import BENCH_FILES, main
from taskscope.export import encode_snapshot, read_profile_csv
from taskscope.snapshot import FlatProfileEntry, Snapshot, merge_profiles

FAST_CONFIG = "levels = 2\nsteps = 2\nkernel_min_ns = 10000\nkernel_max_ns = 30000\nworkers = 1\nseed = 4\n"


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "w.cfg"
    path.write_text(FAST_CONFIG)
    return str(path)


def _calls(path):
    with open(path, newline="") as f:
        return {(r["rank"], r["name"]): r["calls"] for r in csv.DictReader(f)}


def test_bench_writes_exact_file_set(tmp_path, config):
    out = tmp_path / "run"
    assert main(["bench", "--config", config, "--localities", "1", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == sorted(BENCH_FILES)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["steps"] == 2
    assert manifest["timings"]["computation_s"] > 0
    json.loads((out / "trace.json").read_text())


def test_bench_profile_off_gives_header_only(tmp_path, config):
    out = tmp_path / "off"
    assert main(["bench", "--config", config, "--profile", "off", "--out", str(out)]) == 0
    assert (out / "profile.csv").read_text().strip() == "rank,name,calls,total_ns,mean_ns,min_ns,max_ns,yields"


def test_bench_call_counts_are_deterministic(tmp_path, config):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert main(["bench", "--config", config, "--localities", "2", "--out", str(out)]) == 0
        runs.append(_calls(out / "profile.csv"))
    assert runs[0] == runs[1]


def test_bench_over_tcp_processes(tmp_path, config):
    out = tmp_path / "tcp"
    proc = subprocess.run(
        [sys.executable, "-m", "taskscope", "bench", "--config", config, "--localities", "2",
         "--transport", "tcp", "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    ranks = read_profile_csv(out / "profile.csv")
    assert sorted(ranks) == [0, 1]
    total = sum(s.profile["execute_step"].calls for s in ranks.values())
    assert total == 9 * 2


@pytest.mark.parametrize("argv", [
    ["bench", "--out", "x", "--bogus"],
    ["bench"],
    ["nonsense"],
    ["sweep", "--counts", "4,2"],
    ["overhead", "--repetitions", "0"],
])
def test_usage_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 1


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("mystery = 3\n")
    assert main(["bench", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "mystery" in capsys.readouterr().err


def test_missing_snapshot_exits_one(tmp_path):
    assert main(["export", "--snapshot", str(tmp_path / "none.bin"), "--out", str(tmp_path)]) == 1


def test_corrupt_snapshot_exits_one(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"TSCP\x01garbage")
    assert main(["export", "--snapshot", str(path), "--out", str(tmp_path / "o")]) == 1


def test_runtime_failure_exits_two(tmp_path, monkeypatch):
    import taskscope.cli as cli

    def explode(*a, **k):
        raise RuntimeError("device on fire")

    monkeypatch.setattr(cli, "run_benchmark", explode)
    assert main(["bench", "--out", str(tmp_path / "o")]) == 2


def test_overhead_equal_injected_times(capsys):
    times = "absent=1.5,disabled=1.5,cpu_only=1.5,full=1.5"
    assert main(["overhead", "--repetitions", "2", "--inject-times", times]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert all(line.endswith("o=0.00%") for line in lines)


def test_overhead_output_is_byte_identical(tmp_path):
    times = "absent=1.0,disabled=1.1,cpu_only=1.2,full=1.3"
    paths = [tmp_path / f"o{k}.csv" for k in range(2)]
    for p in paths:
        assert main(["overhead", "--inject-times", times, "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_overhead_bad_injection(capsys):
    assert main(["overhead", "--inject-times", "full=1"]) == 1


def test_sweep_single_count(capsys):
    assert main(["sweep", "--counts", "2", "--inject-times", "2:3.0:2.0"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert len(rows) == 2
    assert rows[1].split(",")[-2:] == ["1.0", "1.0"]


def test_sweep_file_is_byte_identical(tmp_path):
    paths = [tmp_path / f"s{k}.csv" for k in range(2)]
    for p in paths:
        assert main(["sweep", "--inject-times", "1:4:3,2:2.5:1.6,4:1.5:0.9", "--out", str(p)]) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert len(paths[0].read_text().splitlines()) == 4


def _rank_snapshot(rank):
    return Snapshot(rank=rank, profile={
        "X": FlatProfileEntry("X", rank + 1, 10 * (rank + 1), 10, 10),
        f"only{rank}": FlatProfileEntry(f"only{rank}", 1, 5, 5, 5),
    }, edges={("X", f"only{rank}"): 1})


def test_aggregate_matches_fold(tmp_path):
    files = []
    for r in range(4):
        p = tmp_path / f"r{r}.bin"
        p.write_bytes(encode_snapshot(_rank_snapshot(r)))
        files.append(str(p))
    out = tmp_path / "agg"
    assert main(["aggregate", *files, "--out", str(out)]) == 0
    oracle = _rank_snapshot(0)
    for r in (1, 2, 3):
        oracle = merge_profiles(oracle, _rank_snapshot(r))
    assert (out / "snapshot.bin").read_bytes() == encode_snapshot(oracle)
    assert read_profile_csv(out / "profile.csv")[-1].profile["X"].calls == 10


def test_export_and_repeat_is_byte_identical(tmp_path):
    snap = tmp_path / "s.bin"
    snap.write_bytes(encode_snapshot(_rank_snapshot(2)))
    for k in range(2):
        assert main(["export", "--snapshot", str(snap), "--out", str(tmp_path / f"e{k}")]) == 0
    for name in ("profile.csv", "scatter.csv", "trace.json", "taskgraph.dot"):
        assert (tmp_path / "e0" / name).read_bytes() == (tmp_path / "e1" / name).read_bytes()


def _profile_file(path, means):
    snap = Snapshot(profile={n: FlatProfileEntry(n, 2, 2 * m, m, m) for n, m in means.items()})
    from taskscope.export import write_profile_csv
    write_profile_csv(snap, path)
    return str(path)


def test_diff_identical(tmp_path, capsys):
    a = _profile_file(tmp_path / "a.csv", {"x": 10, "y": 20})
    assert main(["diff", "--a", a, "--b", a]) == 0
    out = capsys.readouterr().out
    assert out.count("1.000") == 2


def test_diff_flags_gap_first(tmp_path, capsys):
    a = _profile_file(tmp_path / "a.csv", {"mild": 110, "hot": 460})
    b = _profile_file(tmp_path / "b.csv", {"mild": 100, "hot": 100})
    assert main(["diff", "--a", a, "--b", b]) == 0
    body = capsys.readouterr().out.splitlines()[2:]
    assert body[0].startswith("hot") and body[0].rstrip().endswith("*")
    assert "4.600" in body[0]


def test_diff_disjoint(tmp_path, capsys):
    a = _profile_file(tmp_path / "a.csv", {"p": 1})
    b = _profile_file(tmp_path / "b.csv", {"q": 1})
    assert main(["diff", "--a", a, "--b", b]) == 0
    body = capsys.readouterr().out.splitlines()[2:]
    assert all("one-sided" in line for line in body) and len(body) == 2


def test_diff_errors(tmp_path):
    a = _profile_file(tmp_path / "a.csv", {"p": 1})
    assert main(["diff", "--a", a, "--b", a, "--threshold", "1"]) == 1
    (tmp_path / "junk.csv").write_text("nope\n")
    assert main(["diff", "--a", a, "--b", str(tmp_path / "junk.csv")]) == 1
