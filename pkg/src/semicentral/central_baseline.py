"""Fully centralized comparison scheduler.

Workers push tasks to the center while it is open; the center keeps them in
a bounded max-priority queue and dispatches the largest to idle workers.
Crossing the task or memory limit broadcasts QUEUE_FULL; draining to the
hysteresis ratio broadcasts QUEUE_OPEN.
"""
from __future__ import annotations

import enum
import heapq
import itertools
from dataclasses import dataclass, field

from .center import BROADCAST, Coordinator, Emit, FinalResult
from .problem import INF
from .transport import Message, ProtocolError, Tag, pack_i64, unpack_i64


class Flag(enum.Enum):
    OPEN = "open"
    FULL = "full"


class WStatus(enum.Enum):
    RUNNING = "running"
    AVAILABLE = "available"


PUSH_TO_CENTER = "push"
KEEP_LOCAL = "keep"


def worker_push_policy(center_flag: Flag) -> str:
    return PUSH_TO_CENTER if center_flag is Flag.OPEN else KEEP_LOCAL


@dataclass
class CentralQueueState:
    p: int
    c: int = 1000
    memory_limit: int = 10 * 1024**3
    hysteresis: float = 0.9
    order: str = "priority"
    flag: Flag = Flag.OPEN
    status: dict[int, WStatus] = field(default_factory=dict)
    queue: list = field(default_factory=list)
    queued_bytes: int = 0
    max_queue_len: int = 0
    flag_trace: list[Flag] = field(default_factory=list)

    def __post_init__(self):
        if self.order not in ("priority", "fifo"):
            raise ValueError(f"unknown queue order {self.order!r}")
        self._seq = itertools.count()
        for w in range(1, self.p + 1):
            self.status.setdefault(w, WStatus.AVAILABLE)

    @property
    def task_limit(self) -> int:
        return self.c * self.p

    def push(self, priority: int, payload: bytes) -> None:
        key = -priority if self.order == "priority" else 0
        heapq.heappush(self.queue, (key, next(self._seq), payload))
        self.queued_bytes += len(payload)
        self.max_queue_len = max(self.max_queue_len, len(self.queue))

    def pop(self) -> bytes:
        _, _, payload = heapq.heappop(self.queue)
        self.queued_bytes -= len(payload)
        return payload

    def update_flag(self) -> list[Emit]:
        n = len(self.queue)
        if self.flag is Flag.OPEN:
            if n > self.task_limit or self.queued_bytes > self.memory_limit:
                self.flag = Flag.FULL
                self.flag_trace.append(Flag.FULL)
                return [(BROADCAST, Tag.QUEUE_FULL, b"")]
        elif n <= self.hysteresis * self.task_limit and \
                self.queued_bytes <= self.hysteresis * self.memory_limit:
            self.flag = Flag.OPEN
            self.flag_trace.append(Flag.OPEN)
            return [(BROADCAST, Tag.QUEUE_OPEN, b"")]
        return []


def center_dispatch(state: CentralQueueState) -> list[Emit]:
    """Send queued tasks, largest first, to every available worker."""
    out: list[Emit] = []
    for w in sorted(state.status):
        if not state.queue:
            break
        if state.status[w] is WStatus.AVAILABLE:
            out.append((w, Tag.WORK, state.pop()))
            state.status[w] = WStatus.RUNNING
    out.extend(state.update_flag())
    return out


def central_termination(state: CentralQueueState, in_flight: int) -> bool:
    """True when every worker is idle, the queue is empty and nothing is unacked."""
    return (not state.queue and in_flight == 0
            and all(s is WStatus.AVAILABLE for s in state.status.values()))


def pack_push(priority: int, payload: bytes) -> bytes:
    return pack_i64(priority) + payload


def unpack_push(data: bytes) -> tuple[int, bytes]:
    return unpack_i64(data[:8]), data[8:]


class CentralCenter(Coordinator):
    def __init__(self, p: int, c: int = 1000, memory_limit: int = 10 * 1024**3,
                 hysteresis: float = 0.9, order: str = "priority", timeout: float = 20.0):
        super().__init__(p, timeout)
        self.state = CentralQueueState(p, c=c, memory_limit=memory_limit,
                                       hysteresis=hysteresis, order=order)
        self.in_flight = 0
        self.best_val = INF
        self._holder: int | None = None
        self.best_trace: list[int] = []

    def start(self) -> list[Emit]:
        self.state.status[1] = WStatus.RUNNING
        return []

    def quiet(self) -> bool:
        return central_termination(self.state, self.in_flight)

    @property
    def best_holder(self) -> int | None:
        return self._holder

    def on_message(self, msg: Message) -> list[Emit]:
        src, tag = msg.source, msg.tag
        if not 1 <= src <= self.p:
            raise ProtocolError(f"message {tag.name} from out-of-range rank {src}")
        self.stats[f"recv_{tag.name}"] += 1
        out: list[Emit] = []
        if tag is Tag.BESTVAL_UPDATE:
            v = msg.value
            if v < self.best_val:
                self.best_val, self._holder = v, src
                self.best_trace.append(v)
                self.stats["bestval_broadcasts"] += 1
                out.append((BROADCAST, Tag.BESTVAL_UPDATE, pack_i64(v)))
            return out
        if tag is Tag.TASK_PUSH:
            prio, payload = unpack_push(msg.payload)
            self.state.push(prio, payload)
            out.extend(self.state.update_flag())
            out.append((src, Tag.TASK_ACK, b""))
        elif tag is Tag.TASK_ACK:
            self.in_flight -= 1
        elif tag is Tag.AVAILABLE:
            if self.state.status[src] is WStatus.AVAILABLE:
                self.stats["failed_requests"] += 1
            self.state.status[src] = WStatus.AVAILABLE
        elif tag in (Tag.STARTED_RUNNING, Tag.METADATA):
            return out
        else:
            raise ProtocolError(f"central center cannot handle {tag.name}")
        sent = center_dispatch(self.state)
        self.in_flight += sum(1 for _, t, _ in sent if t is Tag.WORK)
        self.stats["tasks_dispatched"] += sum(1 for _, t, _ in sent if t is Tag.WORK)
        out.extend(sent)
        return out

    def result(self) -> FinalResult:
        stats = dict(self.stats)
        stats["max_queue_len"] = self.state.max_queue_len
        stats["flag_changes"] = len(self.state.flag_trace)
        stats["flag_trace"] = [f.value for f in self.state.flag_trace]
        return FinalResult(self.best_val, self._holder, self.solution, stats,
                           self.reports, list(self.best_trace))
