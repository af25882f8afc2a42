"""Message transports between localities.

Both transports deliver ``(frame_kind, payload)`` pairs to a callback on a
dedicated receive thread, reliably and FIFO per (source, target) pair.

TCP frames are a 4-byte big-endian length followed by that many bytes: one
frame-kind byte and the codec-encoded body.
"""

from __future__ import annotations

import logging
import queue
import socket
import struct
import threading
import time
from typing import Callable

log = logging.getLogger(__name__)

FRAME_PARCEL = 1
FRAME_SNAPSHOT = 2
FRAME_CONTROL = 3

_LEN = struct.Struct(">I")

Deliver = Callable[[int, bytes], None]


class TransportError(RuntimeError):
    pass


class InProcHub:
    """Shared mailboxes for localities living in one process."""

    def __init__(self, world_size: int):
        self.world_size = world_size
        self.mailboxes: list[queue.SimpleQueue] = [queue.SimpleQueue() for _ in range(world_size)]

    def endpoint(self, rank: int) -> "InProcTransport":
        if not 0 <= rank < self.world_size:
            raise TransportError(f"rank {rank} outside world of size {self.world_size}")
        return InProcTransport(self, rank)


class InProcTransport:
    def __init__(self, hub: InProcHub, rank: int):
        self.hub = hub
        self.rank = rank
        self._thread: threading.Thread | None = None

    def start(self, deliver: Deliver) -> None:
        def loop() -> None:
            box = self.hub.mailboxes[self.rank]
            while True:
                item = box.get()
                if item is None:
                    return
                deliver(*item)

        self._thread = threading.Thread(target=loop, name=f"taskscope-recv{self.rank}", daemon=True)
        self._thread.start()

    def send(self, target: int, kind: int, payload: bytes) -> None:
        if not 0 <= target < self.hub.world_size:
            raise TransportError(f"unknown locality {target}")
        self.hub.mailboxes[target].put((kind, payload))

    def close(self) -> None:
        if self._thread is not None:
            self.hub.mailboxes[self.rank].put(None)
            self._thread.join()
            self._thread = None


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class TcpTransport:
    """Length-prefixed frames over one outbound TCP connection per peer."""

    def __init__(self, rank: int, host: str = "127.0.0.1", port: int = 0,
                 retries: int = 100, retry_delay: float = 0.05):
        self.rank = rank
        self.retries = retries
        self.retry_delay = retry_delay
        self._server = socket.create_server((host, port))
        self.address: tuple[str, int] = self._server.getsockname()[:2]
        self.peers: list[tuple[str, int]] = []
        self._out: dict[int, socket.socket] = {}
        self._out_locks: dict[int, threading.Lock] = {}
        self._lock = threading.Lock()
        self._readers: list[threading.Thread] = []
        self._inbound: list[socket.socket] = []
        self._deliver_lock = threading.Lock()
        self._closed = False
        self._acceptor: threading.Thread | None = None

    def set_peers(self, peers: list[tuple[str, int]]) -> None:
        self.peers = [tuple(p) for p in peers]
        self._out_locks = {r: threading.Lock() for r in range(len(self.peers))}

    def start(self, deliver: Deliver) -> None:
        self._deliver = deliver
        self._acceptor = threading.Thread(target=self._accept_loop, name=f"taskscope-accept{self.rank}", daemon=True)
        self._acceptor.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._lock:
                self._inbound.append(conn)
            t = threading.Thread(target=self._read_loop, args=(conn,), name=f"taskscope-recv{self.rank}", daemon=True)
            t.start()
            self._readers.append(t)

    def _read_loop(self, conn: socket.socket) -> None:
        try:
            while True:
                header = _recv_exact(conn, 4)
                if header is None:
                    return
                (length,) = _LEN.unpack(header)
                body = _recv_exact(conn, length)
                if body is None or length < 1:
                    log.warning("locality %d: truncated frame", self.rank)
                    return
                # one delivery at a time, as with the in-process mailbox
                with self._deliver_lock:
                    self._deliver(body[0], body[1:])
        except OSError:
            if not self._closed:
                log.exception("locality %d: receive failed", self.rank)

    def _connection(self, target: int) -> socket.socket:
        with self._lock:
            sock = self._out.get(target)
        if sock is not None:
            return sock
        if not 0 <= target < len(self.peers):
            raise TransportError(f"unknown locality {target}")
        last: OSError | None = None
        for _ in range(self.retries + 1):
            try:
                sock = socket.create_connection(self.peers[target], timeout=5.0)
                sock.settimeout(None)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                break
            except OSError as exc:
                last = exc
                time.sleep(self.retry_delay)
        else:
            raise TransportError(f"cannot reach locality {target} at {self.peers[target]}: {last}")
        with self._lock:
            if target in self._out:
                sock.close()
                return self._out[target]
            self._out[target] = sock
            return sock

    def send(self, target: int, kind: int, payload: bytes) -> None:
        if self._closed:
            raise TransportError("transport closed")
        frame = _LEN.pack(len(payload) + 1) + bytes((kind,)) + payload
        lock = self._out_locks.get(target)
        if lock is None:
            raise TransportError(f"unknown locality {target}")
        with lock:
            sock = self._connection(target)
            try:
                sock.sendall(frame)
            except OSError as exc:
                raise TransportError(f"send to locality {target} failed: {exc}") from exc

    def close(self) -> None:
        self._closed = True
        with self._lock:
            socks = list(self._out.values()) + self._inbound
            self._out.clear()
        for s in socks:
            try:
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            s.close()
        try:
            # wakes a blocked accept() on Linux
            self._server.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._server.close()
        if self._acceptor is not None:
            self._acceptor.join(timeout=2)
        for t in self._readers:
            t.join(timeout=2)
