"""The semi-centralized coordinator.

The center never holds a task. It tracks one status per worker, the best
value seen so far and who holds it, and tells running workers whom to feed.
Startup waiting lists approximate an even split of the top of the search
tree; termination is decided by a quiet-period timeout followed by a
query round that any worker with unacknowledged sends may refuse.
"""
from __future__ import annotations

import collections
import enum
import json
import random
from dataclasses import dataclass, field
from typing import Any

from .problem import INF
from .transport import CENTER, Message, ProtocolError, Tag, pack_i64, pack_rank

BROADCAST = -1


class Status(enum.Enum):
    RUNNING = "running"
    AVAILABLE = "available"
    ASSIGNED = "assigned"


Emit = tuple[int, Tag, bytes]


def build_waiting_lists(max_b: int, p: int) -> dict[int, list[int]]:
    """Startup waiting list of every worker rank ``1..p``.

    Worker ``i`` expects to hand its first ``max_b - 1`` children at each
    depth to the ranks ``j * max_b**d + i``; ranks above ``p`` are skipped.
    """
    if max_b < 2:
        raise ValueError("max_b must be at least 2")
    lists: dict[int, list[int]] = {i: [] for i in range(1, p + 1)}
    max_depth, span = 0, 1
    while span < p:
        span *= max_b
        max_depth += 1

    def build(pi: int, base_d: int) -> None:
        for d in range(base_d, max_depth + 1):
            for j in range(1, max_b):
                q = j * max_b ** d + pi
                if q <= p:
                    lists[pi].append(q)
                    build(q, d + 1)

    if p >= 1:
        build(1, 0)
    return lists


@dataclass
class CenterState:
    p: int
    policy: str = "random"
    seed: int = 0
    status: dict[int, Status] = field(default_factory=dict)
    best_val: int = INF
    best_holder: int | None = None
    metadata: dict[int, int | None] = field(default_factory=dict)
    assignments: dict[int, list[int]] = field(default_factory=dict)  # sender -> receivers
    feeder: dict[int, int] = field(default_factory=dict)             # receiver -> sender
    stats: collections.Counter = field(default_factory=collections.Counter)
    best_trace: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.policy not in ("random", "metadata"):
            raise ValueError(f"unknown policy {self.policy!r}")
        self.rng = random.Random(self.seed)
        for w in range(1, self.p + 1):
            self.status.setdefault(w, Status.AVAILABLE)
            self.metadata.setdefault(w, None)
            self.assignments.setdefault(w, [])

    def assign(self, sender: int, receiver: int) -> None:
        self.assignments[sender].append(receiver)
        self.feeder[receiver] = sender
        self.status[receiver] = Status.ASSIGNED

    def release(self, receiver: int) -> None:
        sender = self.feeder.pop(receiver, None)
        if sender is not None:
            self.assignments[sender].remove(receiver)

    def all_idle(self) -> bool:
        return all(s is not Status.RUNNING for s in self.status.values())

    def reaches(self, start: int, target: int) -> bool:
        """Does the chain of assignments starting at ``start`` lead to ``target``?"""
        seen, stack = set(), [start]
        while stack:
            r = stack.pop()
            if r == target:
                return True
            if r in seen:
                continue
            seen.add(r)
            stack.extend(self.assignments.get(r, ()))
        return False

    def is_acyclic(self) -> bool:
        return not any(self.reaches(r, s) for s, rs in self.assignments.items() for r in rs)


def get_next_working_node(state: CenterState, requester: int) -> int | None:
    """Pick the running worker that should feed ``requester``.

    Candidates whose assignment chain from ``requester`` already leads back
    to them are excluded so that no waiting cycle forms.
    """
    cands = [w for w in sorted(state.status)
             if w != requester and state.status[w] is Status.RUNNING
             and not state.reaches(requester, w)]
    if not cands:
        return None
    if state.policy == "metadata":
        return max(cands, key=lambda w: (-INF if state.metadata[w] is None else state.metadata[w], -w))
    return state.rng.choice(cands)


def _check_source(state: CenterState, msg: Message) -> None:
    if not 1 <= msg.source <= state.p:
        raise ProtocolError(f"message {msg.tag.name} from out-of-range rank {msg.source}")


def handle_center_message(state: CenterState, msg: Message) -> list[Emit]:
    """React to one worker message; returns the messages to send."""
    _check_source(state, msg)
    src, tag = msg.source, msg.tag
    out: list[Emit] = []
    state.stats[f"recv_{tag.name}"] += 1
    if tag is Tag.BESTVAL_UPDATE:
        v = msg.value
        if v < state.best_val:
            state.best_val, state.best_holder = v, src
            state.best_trace.append(v)
            state.stats["bestval_broadcasts"] += 1
            out.append((BROADCAST, Tag.BESTVAL_UPDATE, pack_i64(v)))
    elif tag is Tag.AVAILABLE:
        if state.status[src] is not Status.RUNNING:
            state.stats["failed_requests"] += 1
        w = get_next_working_node(state, src)
        if w is not None:
            out.append((w, Tag.SEND_WORK, pack_rank(src)))
            state.assign(w, src)
            state.stats["reassignments"] += 1
        else:
            state.status[src] = Status.AVAILABLE
    elif tag is Tag.STARTED_RUNNING:
        state.status[src] = Status.RUNNING
        state.release(src)
        idle = [w for w in sorted(state.status)
                if state.status[w] is Status.AVAILABLE and not state.reaches(w, src)]
        if idle:
            w = idle[0]
            out.append((src, Tag.SEND_WORK, pack_rank(w)))
            state.assign(src, w)
            state.stats["reassignments"] += 1
    elif tag is Tag.METADATA:
        state.metadata[src] = msg.value
    else:
        raise ProtocolError(f"center cannot handle {tag.name} here")
    return out


class Phase(enum.Enum):
    LOOP = "loop"
    QUIET = "quiet"
    QUERY = "query"
    FETCH = "fetch"
    REPORTS = "reports"
    DONE = "done"


@dataclass
class FinalResult:
    best_val: int
    best_holder: int | None
    solution: bytes | None
    stats: dict
    reports: dict[int, dict]
    best_trace: list[int]


class Coordinator:
    """Termination rounds and the final solution fetch, shared by both schedulers.

    ``timeout`` is in the caller's clock units (seconds in real time, ticks
    in simulation). Subclasses provide ``quiet()`` and ``on_message()``.
    """

    TERMINATION_TAGS = (Tag.TERMINATE_ACCEPT, Tag.TERMINATE_REFUSE)

    def __init__(self, p: int, timeout: float = 20.0):
        self.p = p
        self.timeout = timeout
        self.phase = Phase.LOOP
        self.deadline = 0.0
        self.replies: dict[int, Tag] = {}
        self.saw_running = False
        self.solution: bytes | None = None
        self.reports: dict[int, dict] = {}
        self.stats = collections.Counter()

    # subclass hooks
    def quiet(self) -> bool:
        raise NotImplementedError

    def on_message(self, msg: Message) -> list[Emit]:
        raise NotImplementedError

    @property
    def best_holder(self) -> int | None:
        raise NotImplementedError

    @property
    def done(self) -> bool:
        return self.phase is Phase.DONE

    def start(self) -> list[Emit]:
        return []

    def handle(self, msg: Message, now: float) -> list[Emit]:
        tag = msg.tag
        if tag in self.TERMINATION_TAGS:
            if self.phase is not Phase.QUERY:
                raise ProtocolError(f"{tag.name} outside a termination round")
            self.replies[msg.source] = tag
            return self._maybe_close_round()
        if tag is Tag.SOLUTION:
            self.solution = msg.payload
            self.phase = Phase.REPORTS
            return [(BROADCAST, Tag.SHUTDOWN, b"")]
        if tag is Tag.REPORT:
            self.reports[msg.source] = json.loads(msg.payload)
            if len(self.reports) == self.p:
                self.phase = Phase.DONE
            return []
        if tag is Tag.STARTED_RUNNING and self.phase is Phase.QUERY:
            self.saw_running = True
        out = self.on_message(msg)
        if self.phase is Phase.QUIET and not self.quiet():
            self.phase = Phase.LOOP
            self.stats["quiet_waits_cancelled"] += 1
        return out

    def poll(self, now: float) -> list[Emit]:
        """Advance the termination timer. Call once per loop iteration."""
        if self.phase is Phase.LOOP and self.quiet():
            self.phase = Phase.QUIET
            self.deadline = now + self.timeout
        if self.phase is Phase.QUIET:
            if not self.quiet():
                self.phase = Phase.LOOP
            elif now >= self.deadline:
                self.phase = Phase.QUERY
                self.replies = {}
                self.saw_running = False
                self.stats["termination_attempts"] += 1
                return [(BROADCAST, Tag.TERMINATE, b"")]
        return []

    def _maybe_close_round(self) -> list[Emit]:
        if len(self.replies) < self.p:
            return []
        accepted = all(t is Tag.TERMINATE_ACCEPT for t in self.replies.values())
        if accepted and not self.saw_running and self.quiet():
            holder = self.best_holder
            if holder is None:
                self.phase = Phase.REPORTS
                return [(BROADCAST, Tag.SHUTDOWN, b"")]
            self.phase = Phase.FETCH
            return [(holder, Tag.SOLUTION_REQUEST, b"")]
        self.stats["termination_refused"] += 1
        self.phase = Phase.LOOP
        return [(BROADCAST, Tag.TERMINATE_CANCEL, b"")]

    def result(self) -> FinalResult:
        raise NotImplementedError


class Center(Coordinator):
    """Semi-centralized center: status tracking, brokering and termination."""

    def __init__(self, p: int, max_b: int = 2, policy: str = "random", seed: int = 0,
                 timeout: float = 20.0, waiting_lists: bool = True):
        super().__init__(p, timeout)
        self.max_b = max_b
        self.state = CenterState(p, policy=policy, seed=seed)
        self.waiting_lists = waiting_lists

    def start(self) -> list[Emit]:
        """Mark worker 1 running (it holds the seed) and install startup lists.

        Each startup assignment is sent as an ordinary SEND_WORK; per-pair
        FIFO delivery keeps every list in construction order.
        """
        st = self.state
        st.status[1] = Status.RUNNING
        out: list[Emit] = []
        if self.waiting_lists:
            for sender, receivers in build_waiting_lists(self.max_b, self.p).items():
                for r in receivers:
                    st.assign(sender, r)
                    out.append((sender, Tag.SEND_WORK, pack_rank(r)))
        return out

    def quiet(self) -> bool:
        return self.state.all_idle()

    def on_message(self, msg: Message) -> list[Emit]:
        return handle_center_message(self.state, msg)

    @property
    def best_holder(self) -> int | None:
        return self.state.best_holder

    def result(self) -> FinalResult:
        stats = dict(self.stats)
        stats.update(self.state.stats)
        return FinalResult(self.state.best_val, self.state.best_holder, self.solution,
                           stats, self.reports, list(self.state.best_trace))


def expand(emits: list[Emit], p: int):
    """Turn BROADCAST emits into one (dest, tag, payload) per worker."""
    for dest, tag, payload in emits:
        if dest == BROADCAST:
            for w in range(1, p + 1):
                yield w, tag, payload
        else:
            yield dest, tag, payload


def dispatch(ep: Any, emits: list[Emit], stats: collections.Counter | None = None) -> None:
    for dest, tag, payload in emits:
        if dest == BROADCAST:
            ep.broadcast_async(tag, payload)
        else:
            ep.send_async(dest, tag, payload)
        if stats is not None:
            stats[f"sent_{tag.name}"] += ep.nranks - 1 if dest == BROADCAST else 1


__all__ = [
    "BROADCAST", "CENTER", "Center", "CenterState", "Coordinator", "FinalResult", "Phase",
    "Status", "build_waiting_lists", "dispatch", "expand", "get_next_working_node",
    "handle_center_message",
]
