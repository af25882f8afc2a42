from .locality import (
    PARCEL_LANE,
    SCHEDULE_PARCEL,
    BarrierTimeoutError,
    DistribError,
    Locality,
    MessageStats,
    ReductionTimeoutError,
    RemoteActionError,
    World,
    connect_tcp,
)
from .transport import FRAME_CONTROL, FRAME_PARCEL, FRAME_SNAPSHOT, InProcHub, TcpTransport, TransportError

__all__ = [
    "BarrierTimeoutError",
    "DistribError",
    "FRAME_CONTROL",
    "FRAME_PARCEL",
    "FRAME_SNAPSHOT",
    "InProcHub",
    "Locality",
    "MessageStats",
    "PARCEL_LANE",
    "ReductionTimeoutError",
    "RemoteActionError",
    "SCHEDULE_PARCEL",
    "TcpTransport",
    "TransportError",
    "World",
    "connect_tcp",
]
