"""Self-describing binary codec for snapshots and wire messages.

Layout: magic ``TSCP``, one version byte, then little-endian fields.  Strings
and byte blobs are prefixed with a u32 length.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction

from ..snapshot import (
    ActivityKind,
    ActivityRecord,
    CounterSample,
    CounterStats,
    FlatProfileEntry,
    ScatterSample,
    Snapshot,
    TraceSegment,
)

MAGIC = b"TSCP"
VERSION = 1

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")
_ENTRY = struct.Struct("<Qqqqq")
_COUNTER = struct.Struct("<Qdddq")
_SAMPLE = struct.Struct("<qdq")
_SCATTER = struct.Struct("<qqqQ")
_SEGMENT = struct.Struct("<QQqqqq")
_ACTIVITY = struct.Struct("<qqqqBqQq")
_PARCEL = struct.Struct("<QQII")
_CONTROL = struct.Struct("<BIQ")


class CodecError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} at offset {offset}")


class _Writer:
    def __init__(self) -> None:
        self.buf = bytearray()

    def pack(self, st: struct.Struct, *values) -> None:
        self.buf += st.pack(*values)

    def str(self, s: str) -> None:
        data = s.encode("utf-8")
        self.buf += _U32.pack(len(data))
        self.buf += data

    def blob(self, data: bytes) -> None:
        self.buf += _U32.pack(len(data))
        self.buf += data

    def bigint(self, n: int) -> None:
        mag = abs(n)
        data = mag.to_bytes((mag.bit_length() + 7) // 8, "little")
        self.buf += _U8.pack(1 if n < 0 else 0)
        self.blob(data)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0) -> None:
        self.data = memoryview(data)
        self.pos = offset

    def unpack(self, st: struct.Struct) -> tuple:
        end = self.pos + st.size
        if end > len(self.data):
            raise CodecError("truncated buffer", self.pos)
        values = st.unpack_from(self.data, self.pos)
        self.pos = end
        return values

    def one(self, st: struct.Struct):
        return self.unpack(st)[0]

    def blob(self) -> bytes:
        n = self.one(_U32)
        end = self.pos + n
        if end > len(self.data):
            raise CodecError("truncated buffer", self.pos)
        out = bytes(self.data[self.pos:end])
        self.pos = end
        return out

    def str(self) -> str:
        start = self.pos
        raw = self.blob()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise CodecError("invalid utf-8 string", start) from None

    def bigint(self) -> int:
        neg = self.one(_U8)
        n = int.from_bytes(self.blob(), "little")
        return -n if neg else n

    def header(self) -> None:
        if bytes(self.data[self.pos:self.pos + 4]) != MAGIC:
            raise CodecError("bad magic", self.pos)
        self.pos += 4
        version = self.one(_U8)
        if version != VERSION:
            raise CodecError(f"unsupported version {version}", self.pos - 1)

    def end(self) -> None:
        if self.pos != len(self.data):
            raise CodecError("trailing bytes", self.pos)


_KINDS = list(ActivityKind)
_KIND_INDEX = {k: i for i, k in enumerate(_KINDS)}


def _write_entries(w: _Writer, entries: dict[str, FlatProfileEntry]) -> None:
    w.pack(_U32, len(entries))
    for name, e in entries.items():
        w.str(name)
        w.pack(_ENTRY, e.calls, e.total_active_ns, e.min_ns, e.max_ns, e.total_yields)


def _read_entries(r: _Reader) -> dict[str, FlatProfileEntry]:
    out = {}
    for _ in range(r.one(_U32)):
        name = r.str()
        out[name] = FlatProfileEntry(name, *r.unpack(_ENTRY))
    return out


def _write_counts(w: _Writer, counts: dict[str, int]) -> None:
    w.pack(_U32, len(counts))
    for name, n in counts.items():
        w.str(name)
        w.pack(_I64, n)


def _read_counts(r: _Reader) -> dict[str, int]:
    out = {}
    for _ in range(r.one(_U32)):
        name = r.str()
        out[name] = r.one(_I64)
    return out


def encode_snapshot(snap: Snapshot) -> bytes:
    w = _Writer()
    w.buf += MAGIC
    w.pack(_U8, VERSION)
    w.pack(_I64, snap.rank)
    _write_entries(w, snap.profile)
    _write_entries(w, snap.device_profile)
    _write_entries(w, snap.provisional)
    w.pack(_U32, len(snap.counters))
    for name, c in snap.counters.items():
        w.str(name)
        w.pack(_COUNTER, c.count, c.min, c.max, c.last, c.last_ts_ns)
        w.bigint(c.total.numerator)
        w.bigint(c.total.denominator)
    w.pack(_U32, len(snap.counter_samples))
    for s in snap.counter_samples:
        w.str(s.name)
        w.pack(_SAMPLE, s.ts_ns, s.value, s.rank)
    w.pack(_U32, len(snap.scatter))
    for s in snap.scatter:
        w.str(s.name)
        w.pack(_SCATTER, s.start_ns, s.duration_ns, s.rank, s.guid)
    w.pack(_U32, len(snap.edges))
    for (parent, child), n in snap.edges.items():
        w.str(parent)
        w.str(child)
        w.pack(_U64, n)
    w.pack(_U32, len(snap.segments))
    for s in snap.segments:
        w.str(s.name)
        w.pack(_SEGMENT, s.guid, s.parent_guid, s.worker, s.start_ns, s.end_ns, s.rank)
    w.pack(_U32, len(snap.activities))
    for a in snap.activities:
        w.str(a.name)
        has_bytes = a.bytes is not None
        w.pack(
            _ACTIVITY, a.device_id, a.stream_id, a.start_ns, a.end_ns,
            _KIND_INDEX[a.kind] | (0x80 if has_bytes else 0),
            a.bytes if has_bytes else 0, a.correlation_guid, a.rank,
        )
    _write_counts(w, snap.diagnostics)
    return bytes(w.buf)


def _decode_snapshot(r: _Reader) -> Snapshot:
    r.header()
    snap = Snapshot(rank=r.one(_I64))
    snap.profile = _read_entries(r)
    snap.device_profile = _read_entries(r)
    snap.provisional = _read_entries(r)
    for _ in range(r.one(_U32)):
        name = r.str()
        count, lo, hi, last, last_ts = r.unpack(_COUNTER)
        num, den = r.bigint(), r.bigint()
        if den <= 0:
            raise CodecError("invalid counter total", r.pos)
        snap.counters[name] = CounterStats(name, count, lo, hi, Fraction(num, den), last, last_ts)
    for _ in range(r.one(_U32)):
        name = r.str()
        snap.counter_samples.append(CounterSample(name, *r.unpack(_SAMPLE)))
    for _ in range(r.one(_U32)):
        name = r.str()
        snap.scatter.append(ScatterSample(name, *r.unpack(_SCATTER)))
    for _ in range(r.one(_U32)):
        parent, child = r.str(), r.str()
        snap.edges[(parent, child)] = r.one(_U64)
    for _ in range(r.one(_U32)):
        name = r.str()
        guid, parent, worker, start, end, rank = r.unpack(_SEGMENT)
        snap.segments.append(TraceSegment(name, guid, parent, worker, start, end, rank))
    for _ in range(r.one(_U32)):
        name = r.str()
        pos = r.pos
        device, stream, start, end, kind, nbytes, corr, rank = r.unpack(_ACTIVITY)
        if (kind & 0x7F) >= len(_KINDS):
            raise CodecError(f"unknown activity kind {kind & 0x7F}", pos)
        snap.activities.append(ActivityRecord(
            _KINDS[kind & 0x7F], name, device, stream, start, end,
            nbytes if kind & 0x80 else None, corr, rank,
        ))
    snap.diagnostics = _read_counts(r)
    return snap


def decode_snapshot(data: bytes) -> Snapshot:
    r = _Reader(data)
    snap = _decode_snapshot(r)
    r.end()
    return snap


# -- wire messages -----------------------------------------------------------


@dataclass(frozen=True)
class Parcel:
    action_name: str
    source: int
    target: int
    payload: bytes
    parcel_id: int
    # parcel id this message answers; 0 for requests
    reply_to: int = 0


def encode_parcel(p: Parcel) -> bytes:
    w = _Writer()
    w.pack(_PARCEL, p.parcel_id, p.reply_to, p.source, p.target)
    w.str(p.action_name)
    w.blob(p.payload)
    return bytes(w.buf)


def decode_parcel(data: bytes) -> Parcel:
    r = _Reader(data)
    parcel_id, reply_to, source, target = r.unpack(_PARCEL)
    name = r.str()
    payload = r.blob()
    r.end()
    return Parcel(name, source, target, payload, parcel_id, reply_to)


@dataclass(frozen=True)
class Control:
    op: int
    rank: int
    epoch: int


def encode_control(c: Control) -> bytes:
    return _CONTROL.pack(c.op, c.rank, c.epoch)


def decode_control(data: bytes) -> Control:
    r = _Reader(data)
    c = Control(*r.unpack(_CONTROL))
    r.end()
    return c


def encode_snapshot_frame(epoch: int, snap: Snapshot) -> bytes:
    return _U64.pack(epoch) + encode_snapshot(snap)


def decode_snapshot_frame(data: bytes) -> tuple[int, Snapshot]:
    r = _Reader(data)
    epoch = r.one(_U64)
    snap = _decode_snapshot(r)
    r.end()
    return epoch, snap
