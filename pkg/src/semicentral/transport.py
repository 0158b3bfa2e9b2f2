"""Tagged, non-blocking message passing between a center (rank 0) and workers.

Three endpoint flavours share one interface (``send_async``, ``try_receive``,
``broadcast_async``, ``close``):

* :class:`SimNetwork` endpoints: virtual time, seeded per-message delays,
  deterministic delivery. Used for protocol testing.
* :class:`LocalHub` endpoints: real time, in-process queues (threads).
* :class:`TcpEndpoint`: real sockets, full mesh from a rank file.

Every message crosses the byte-exact wire frame
``[1B tag][2B source LE][4B payload length LE][payload]``.
"""
from __future__ import annotations

import collections
import enum
import errno
import heapq
import queue
import random
import selectors
import socket
import struct
import time
from dataclasses import dataclass
from typing import Callable, Iterable

CENTER = 0
MAX_PAYLOAD = 64 * 1024 * 1024

HEADER = struct.Struct("<BHI")
_I64 = struct.Struct("<q")
_U16 = struct.Struct("<H")


class TransportError(RuntimeError):
    """Endpoint-level failure (closed endpoint, dead peer). Fatal for the rank."""


class ProtocolError(RuntimeError):
    """Malformed frame or message that violates the protocol."""

    def __init__(self, message: str, header: bytes = b""):
        super().__init__(message)
        self.header = bytes(header)


class UnsupportedOperation(TransportError):
    pass


class Tag(enum.IntEnum):
    BESTVAL_UPDATE = 0x01
    AVAILABLE = 0x02
    STARTED_RUNNING = 0x03
    METADATA = 0x04
    SEND_WORK = 0x05
    WORK = 0x06
    TASK_ACK = 0x07
    TERMINATE = 0x08
    TERMINATE_REFUSE = 0x09
    TERMINATE_ACCEPT = 0x0A
    TERMINATE_CANCEL = 0x0B
    SHUTDOWN = 0x0C
    SOLUTION_REQUEST = 0x0D
    SOLUTION = 0x0E
    REPORT = 0x0F
    TASK_PUSH = 0x10
    QUEUE_FULL = 0x11
    QUEUE_OPEN = 0x12


_EMPTY = frozenset({
    Tag.AVAILABLE, Tag.STARTED_RUNNING, Tag.TASK_ACK, Tag.TERMINATE,
    Tag.TERMINATE_REFUSE, Tag.TERMINATE_ACCEPT, Tag.TERMINATE_CANCEL,
    Tag.SHUTDOWN, Tag.SOLUTION_REQUEST, Tag.QUEUE_FULL, Tag.QUEUE_OPEN,
})
_FIXED = {Tag.BESTVAL_UPDATE: 8, Tag.METADATA: 8, Tag.SEND_WORK: 2}


def check_payload(tag: Tag, payload: bytes, max_payload: int = MAX_PAYLOAD) -> None:
    n = len(payload)
    if n > max_payload:
        raise ProtocolError(f"{tag.name} payload of {n} bytes exceeds {max_payload}")
    if tag in _EMPTY and n:
        raise ProtocolError(f"{tag.name} carries no payload, got {n} bytes")
    if tag in _FIXED and n != _FIXED[tag]:
        raise ProtocolError(f"{tag.name} payload must be {_FIXED[tag]} bytes, got {n}")
    if tag is Tag.TASK_PUSH and n < 8:
        raise ProtocolError("TASK_PUSH payload must start with an 8-byte priority")


def pack_i64(value: int) -> bytes:
    return _I64.pack(value)


def unpack_i64(payload: bytes) -> int:
    return _I64.unpack(payload)[0]


def pack_rank(rank: int) -> bytes:
    return _U16.pack(rank)


def unpack_rank(payload: bytes) -> int:
    return _U16.unpack(payload)[0]


@dataclass(frozen=True)
class Message:
    tag: Tag
    source: int
    payload: bytes = b""

    @property
    def value(self) -> int:
        """Integer view for the fixed-size tags."""
        if self.tag is Tag.SEND_WORK:
            return unpack_rank(self.payload)
        return unpack_i64(self.payload[:8])


def encode(msg: Message, max_payload: int = MAX_PAYLOAD) -> bytes:
    check_payload(msg.tag, msg.payload, max_payload)
    return HEADER.pack(int(msg.tag), msg.source, len(msg.payload)) + msg.payload


def decode_header(header: bytes, max_payload: int = MAX_PAYLOAD) -> tuple[Tag, int, int]:
    code, source, length = HEADER.unpack(header)
    try:
        tag = Tag(code)
    except ValueError:
        raise ProtocolError(f"unknown tag code 0x{code:02X}", header) from None
    if length > max_payload:
        raise ProtocolError(f"payload length {length} exceeds {max_payload}", header)
    return tag, source, length


def decode(frame: bytes, max_payload: int = MAX_PAYLOAD) -> Message:
    if len(frame) < HEADER.size:
        raise ProtocolError("truncated header", frame)
    tag, source, length = decode_header(frame[: HEADER.size], max_payload)
    payload = frame[HEADER.size:]
    if len(payload) != length:
        raise ProtocolError(
            f"frame declares {length} payload bytes, carries {len(payload)}", frame[: HEADER.size]
        )
    msg = Message(tag, source, bytes(payload))
    check_payload(tag, msg.payload, max_payload)
    return msg


class FrameReader:
    """Incremental frame parser for a byte stream."""

    def __init__(self, max_payload: int = MAX_PAYLOAD):
        self.max_payload = max_payload
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Message]:
        self._buf += data
        out = []
        while len(self._buf) >= HEADER.size:
            header = bytes(self._buf[: HEADER.size])
            tag, source, length = decode_header(header, self.max_payload)
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            payload = bytes(self._buf[HEADER.size:end])
            del self._buf[:end]
            check_payload(tag, payload, self.max_payload)
            out.append(Message(tag, source, payload))
        return out


class Endpoint:
    """Common surface. Subclasses implement ``_post`` and ``try_receive``."""

    rank: int
    nranks: int

    @property
    def workers(self) -> range:
        return range(1, self.nranks)

    def send_async(self, dest: int, tag: Tag, payload: bytes = b"") -> None:
        if self.closed:
            raise TransportError(f"rank {self.rank}: endpoint closed")
        if not 0 <= dest < self.nranks:
            raise TransportError(f"rank {self.rank}: no such destination {dest}")
        frame = encode(Message(Tag(tag), self.rank, payload), self.max_payload)
        self._post(dest, frame)

    def broadcast_async(self, tag: Tag, payload: bytes = b"") -> None:
        for w in self.workers:
            self.send_async(w, tag, payload)

    def try_receive(self) -> Message | None:
        raise NotImplementedError

    def sim_advance(self, ticks: int):
        raise UnsupportedOperation("sim_advance is only available on the simulated transport")

    def close(self) -> None:
        self.closed = True

    def _post(self, dest: int, frame: bytes) -> None:
        raise NotImplementedError


# ---------------------------------------------------------------- simulated

@dataclass(frozen=True)
class Delivery:
    tick: int
    dest: int
    message: Message


class SimNetwork:
    """Virtual-time network connecting ``nranks`` endpoints.

    Each message gets a uniform integer delay in ``[lo, hi]`` from a seeded
    generator. Delivery ticks are clamped so that every ordered pair stays
    FIFO. ``delay_hook(src, dest, tag, drawn) -> int`` may override the draw,
    which is how tests inject adversarial schedules.
    """

    def __init__(self, nranks: int, seed: int = 0, delay: tuple[int, int] = (1, 10),
                 max_payload: int = MAX_PAYLOAD,
                 delay_hook: Callable[[int, int, Tag, int], int] | None = None,
                 keep_trace: bool = True):
        lo, hi = delay
        if not 0 <= lo <= hi:
            raise ValueError(f"bad delay range {delay}")
        self.nranks = nranks
        self.delay = (lo, hi)
        self.rng = random.Random(seed)
        self.delay_hook = delay_hook
        self.max_payload = max_payload
        self.now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, int, int, bytes]] = []
        self._last_tick: dict[tuple[int, int], int] = {}
        self.in_flight_tags: collections.Counter = collections.Counter()
        self.endpoints = [SimEndpoint(self, r) for r in range(nranks)]
        self.trace: list[Delivery] = []
        self.keep_trace = keep_trace
        self.dropped = 0

    def endpoint(self, rank: int) -> "SimEndpoint":
        return self.endpoints[rank]

    def _schedule(self, src: int, dest: int, frame: bytes) -> None:
        d = self.rng.randint(*self.delay)
        if self.delay_hook is not None:
            d = self.delay_hook(src, dest, Tag(frame[0]), d)
        tick = max(self.now + d, self._last_tick.get((src, dest), 0))
        self._last_tick[(src, dest)] = tick
        self._seq += 1
        heapq.heappush(self._heap, (tick, src, self._seq, dest, frame))
        self.in_flight_tags[Tag(frame[0])] += 1

    def in_flight(self) -> int:
        return len(self._heap)

    def sim_advance(self, ticks: int) -> list[Delivery]:
        """Advance the clock and deliver everything now due.

        Order is (delivery tick, sender, send sequence).
        """
        if ticks < 0:
            raise ValueError("cannot advance by a negative amount")
        self.now += ticks
        out = []
        while self._heap and self._heap[0][0] <= self.now:
            tick, src, _, dest, frame = heapq.heappop(self._heap)
            msg = decode(frame, self.max_payload)
            self.in_flight_tags[msg.tag] -= 1
            ep = self.endpoints[dest]
            if ep.closed:
                self.dropped += 1
            else:
                ep.inbox.append(msg)
            d = Delivery(tick, dest, msg)
            out.append(d)
            if self.keep_trace:
                self.trace.append(d)
        return out


class SimEndpoint(Endpoint):
    def __init__(self, net: SimNetwork, rank: int):
        self.net = net
        self.rank = rank
        self.nranks = net.nranks
        self.max_payload = net.max_payload
        self.closed = False
        self.inbox: collections.deque[Message] = collections.deque()

    def _post(self, dest: int, frame: bytes) -> None:
        self.net._schedule(self.rank, dest, frame)

    def try_receive(self) -> Message | None:
        if self.closed:
            raise TransportError(f"rank {self.rank}: endpoint closed")
        return self.inbox.popleft() if self.inbox else None

    def sim_advance(self, ticks: int) -> list[Delivery]:
        return self.net.sim_advance(ticks)


# ---------------------------------------------------------------- in-process

class LocalHub:
    """Real-time in-process transport: one thread-safe queue per rank."""

    def __init__(self, nranks: int, max_payload: int = MAX_PAYLOAD):
        self.nranks = nranks
        self.max_payload = max_payload
        self.queues = [queue.SimpleQueue() for _ in range(nranks)]
        self.endpoints = [LocalEndpoint(self, r) for r in range(nranks)]

    def endpoint(self, rank: int) -> "LocalEndpoint":
        return self.endpoints[rank]


class LocalEndpoint(Endpoint):
    def __init__(self, hub: LocalHub, rank: int):
        self.hub = hub
        self.rank = rank
        self.nranks = hub.nranks
        self.max_payload = hub.max_payload
        self.closed = False

    def _post(self, dest: int, frame: bytes) -> None:
        self.hub.queues[dest].put(frame)

    def try_receive(self) -> Message | None:
        if self.closed:
            raise TransportError(f"rank {self.rank}: endpoint closed")
        try:
            frame = self.hub.queues[self.rank].get_nowait()
        except queue.Empty:
            return None
        return decode(frame, self.max_payload)


# ---------------------------------------------------------------- tcp

def parse_rank_file(text: str) -> dict[int, tuple[str, int]]:
    """Parse ``rank host port`` lines. Blank lines and ``#`` comments are skipped."""
    ranks = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"rank file line {lineno}: expected 'rank host port', got {line!r}")
        rank, host, port = int(parts[0]), parts[1], int(parts[2])
        if rank in ranks:
            raise ValueError(f"rank file line {lineno}: duplicate rank {rank}")
        ranks[rank] = (host, port)
    if sorted(ranks) != list(range(len(ranks))):
        raise ValueError("rank file must list ranks 0..p contiguously")
    if len(ranks) < 2:
        raise ValueError("rank file needs a center and at least one worker")
    return ranks


def format_rank_file(addresses: Iterable[tuple[str, int]]) -> str:
    return "".join(f"{r} {h} {p}\n" for r, (h, p) in enumerate(addresses))


class _Conn:
    __slots__ = ("sock", "peer", "out", "reader")

    def __init__(self, sock: socket.socket, peer: int, max_payload: int):
        self.sock = sock
        self.peer = peer
        self.out = bytearray()
        self.reader = FrameReader(max_payload)


class TcpEndpoint(Endpoint):
    """Full-mesh TCP endpoint.

    Every rank listens on its own address; rank ``i`` dials every lower rank
    and sends its rank as a 2-byte hello. After :meth:`connect` returns, all
    I/O is non-blocking: ``send_async`` only appends to a buffer and tries a
    non-blocking flush, ``try_receive`` polls with zero timeout.
    """

    def __init__(self, rank: int, addresses: dict[int, tuple[str, int]],
                 max_payload: int = MAX_PAYLOAD):
        self.rank = rank
        self.addresses = addresses
        self.nranks = len(addresses)
        self.max_payload = max_payload
        self.closed = False
        self._conns: dict[int, _Conn] = {}
        self._self_queue: collections.deque[Message] = collections.deque()
        self._ready: collections.deque[Message] = collections.deque()
        self._sel = selectors.DefaultSelector()
        self._listener: socket.socket | None = None

    def listen(self) -> None:
        host, port = self.addresses[self.rank]
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((host, port))
        s.listen(self.nranks)
        self._listener = s

    def connect(self, timeout: float = 30.0) -> None:
        if self._listener is None:
            self.listen()
        deadline = time.monotonic() + timeout
        for peer in range(self.rank):
            sock = self._dial(self.addresses[peer], deadline)
            sock.sendall(pack_rank(self.rank))
            self._add(sock, peer)
        self._listener.settimeout(max(0.1, deadline - time.monotonic()))
        while len(self._conns) < self.nranks - 1:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                raise TransportError(f"rank {self.rank}: peers did not connect in time") from None
            sock.settimeout(max(0.1, deadline - time.monotonic()))
            hello = _recv_exact(sock, 2)
            self._add(sock, unpack_rank(hello))
        self._listener.close()
        self._listener = None

    def _dial(self, addr: tuple[str, int], deadline: float) -> socket.socket:
        while True:
            try:
                return socket.create_connection(addr, timeout=5.0)
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(f"rank {self.rank}: cannot reach {addr}") from None
                time.sleep(0.05)

    def _add(self, sock: socket.socket, peer: int) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.setblocking(False)
        conn = _Conn(sock, peer, self.max_payload)
        self._conns[peer] = conn
        self._sel.register(sock, selectors.EVENT_READ, conn)

    def _post(self, dest: int, frame: bytes) -> None:
        if dest == self.rank:
            self._self_queue.append(decode(frame, self.max_payload))
            return
        conn = self._conns[dest]
        conn.out += frame
        self._flush(conn)

    def _flush(self, conn: _Conn) -> None:
        while conn.out:
            try:
                sent = conn.sock.send(conn.out)
            except BlockingIOError:
                return
            except OSError as e:
                if e.errno in (errno.EAGAIN, errno.EWOULDBLOCK):
                    return
                raise TransportError(f"rank {self.rank}: send to {conn.peer} failed: {e}") from e
            del conn.out[:sent]

    def try_receive(self) -> Message | None:
        if self.closed:
            raise TransportError(f"rank {self.rank}: endpoint closed")
        if self._self_queue:
            return self._self_queue.popleft()
        if not self._ready:
            for conn in self._conns.values():
                if conn.out:
                    self._flush(conn)
            for key, _ in self._sel.select(timeout=0):
                conn = key.data
                try:
                    data = conn.sock.recv(1 << 20)
                except BlockingIOError:
                    continue
                except OSError as e:
                    raise TransportError(f"rank {self.rank}: recv from {conn.peer} failed: {e}") from e
                if not data:
                    self._sel.unregister(conn.sock)
                    continue
                self._ready.extend(conn.reader.feed(data))
        return self._ready.popleft() if self._ready else None

    def flush_all(self, timeout: float = 5.0) -> None:
        """Block until every outgoing buffer is drained (used before exit)."""
        deadline = time.monotonic() + timeout
        while any(c.out for c in self._conns.values()):
            for c in self._conns.values():
                self._flush(c)
            if time.monotonic() > deadline:
                break
            time.sleep(0.001)

    def close(self) -> None:
        if self.closed:
            return
        self.flush_all()
        self.closed = True
        for c in self._conns.values():
            try:
                self._sel.unregister(c.sock)
            except (KeyError, ValueError):
                pass
            c.sock.close()
        self._sel.close()
        if self._listener is not None:
            self._listener.close()


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("peer closed during handshake")
        buf += chunk
    return buf


def free_ports(count: int, host: str = "127.0.0.1") -> list[int]:
    socks = []
    try:
        for _ in range(count):
            s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            s.bind((host, 0))
            socks.append(s)
        return [s.getsockname()[1] for s in socks]
    finally:
        for s in socks:
            s.close()
