from .codec import CodecError, decode_snapshot, encode_snapshot
from .diff import ProfileDiffRow, diff_profiles, format_diff_table
from .dot import taskgraph_dot, write_taskgraph_dot
from .tables import (
    PROFILE_COLUMNS,
    SCATTER_COLUMNS,
    TableError,
    read_profile_csv,
    read_scatter_csv,
    write_profile_csv,
    write_scatter_csv,
)
from .trace import device_lane, trace_events, write_trace_events

__all__ = [
    "CodecError",
    "PROFILE_COLUMNS",
    "ProfileDiffRow",
    "SCATTER_COLUMNS",
    "TableError",
    "decode_snapshot",
    "device_lane",
    "diff_profiles",
    "encode_snapshot",
    "format_diff_table",
    "read_profile_csv",
    "read_scatter_csv",
    "taskgraph_dot",
    "trace_events",
    "write_profile_csv",
    "write_scatter_csv",
    "write_taskgraph_dot",
    "write_trace_events",
]
