"""Worker side: exploration threads and the communication loop.

An :class:`Explorer` runs the branching recursion as an explicit stack so it
can be advanced one recursion node at a time (the simulator interleaves
steps with message delivery; a real exploration thread just loops). The
:class:`Worker` holds everything the communication loop touches: best
values, the waiting list, the sent-task counter and the explorers' trees.
"""
from __future__ import annotations

import collections
import enum
import json
import logging
import threading
import time
from typing import Any

from .central_baseline import Flag, pack_push, worker_push_policy, PUSH_TO_CENTER
from .problem import INF, ProblemAdapter
from .tasktree import STOLEN, TaskNode, TaskTree
from .transport import CENTER, Message, ProtocolError, Tag, pack_i64

log = logging.getLogger(__name__)

SEMI = "semi"
CENTRAL = "central"


class WorkerPhase(enum.Enum):
    IDLE = "idle"
    RUNNING = "running"
    TERMINATING = "terminating"


class WorkerConfig:
    """Runtime knobs. ``refusal`` enables the unacked-send termination veto."""

    def __init__(self, threads: int = 1, idle_sleep: float = 0.001, metadata: bool = False,
                 refusal: bool = True, scheduler: str = SEMI,
                 sequential_threshold: int | None = None):
        if threads < 1:
            raise ValueError("a worker needs at least one exploration thread")
        if scheduler not in (SEMI, CENTRAL):
            raise ValueError(f"unknown scheduler {scheduler!r}")
        self.threads = threads
        self.idle_sleep = idle_sleep
        self.metadata = metadata
        self.refusal = refusal
        self.scheduler = scheduler
        self.sequential_threshold = sequential_threshold


class _Frame:
    __slots__ = ("node", "instance", "children", "next")

    def __init__(self, node: TaskNode, instance: Any):
        self.node = node
        self.instance = instance
        self.children: list[TaskNode] | None = None
        self.next = 0


class Explorer:
    """One exploration thread's recursion, advanced by :meth:`step`."""

    def __init__(self, worker: "Worker", index: int = 0):
        self.worker = worker
        self.index = index
        self.adapter = worker.adapter
        self.tree = TaskTree(priority=self.adapter.priority)
        self.stack: list[_Frame] = []
        self.busy = False
        self.nodes = 0
        self.roots = 0
        self.local_runs = 0
        self.registered = 0
        self.stolen_skips = 0

    def start(self, instance: Any) -> None:
        if self.busy:
            raise RuntimeError("explorer already has a task")
        self.busy = True
        self.roots += 1
        node = self.tree.add_root(instance)
        self.stack.append(_Frame(node, instance))

    def step(self) -> bool:
        """Advance by one action. Returns False when there is nothing to do."""
        stack = self.stack
        if not stack:
            return False
        frame = stack[-1]
        tree = self.tree
        if frame.children is None:
            self.nodes += 1
            adapter = self.adapter
            threshold = self.worker.config.sequential_threshold
            if threshold is not None and adapter.priority(frame.instance) < threshold:
                self._solve_locally(frame.instance)
                kids = ()
            else:
                out = adapter.branch(frame.instance, self.worker.get_best())
                if out.solution is not None:
                    self.worker.handle_solution(out.solution)
                kids = out.children if out.solution is None or adapter.explore_after_solution else ()
            if not kids:
                self._finish(frame)
                return True
            frame.children = tree.register_child_instances(kids, frame.node)
            self.registered += len(kids)
            self.worker.on_register(len(kids))
            return True
        if frame.next < len(frame.children):
            node = frame.children[frame.next]
            frame.next += 1
            inst = tree.begin_search(node)
            if inst is STOLEN:
                self.stolen_skips += 1
            else:
                self.local_runs += 1
                stack.append(_Frame(node, inst))
            return True
        self._finish(frame)
        return True

    def _finish(self, frame: _Frame) -> None:
        self.stack.pop()
        self.tree.complete(frame.node)
        if not self.stack:
            self.busy = False

    def _solve_locally(self, instance: Any) -> None:
        adapter, worker = self.adapter, self.worker
        todo = [instance]
        while todo:
            inst = todo.pop()
            out = adapter.branch(inst, worker.get_best())
            if out.solution is not None:
                worker.handle_solution(out.solution)
                if not adapter.explore_after_solution:
                    continue
            todo.extend(reversed(out.children))

    def run_to_completion(self) -> None:
        while self.step():
            pass


class Worker:
    """State and update functions of one worker rank."""

    def __init__(self, rank: int, adapter: ProblemAdapter, config: WorkerConfig | None = None):
        self.rank = rank
        self.adapter = adapter
        self.config = config or WorkerConfig()
        self.local_best = INF
        self.global_best = INF
        self.best_solution = None
        self.best_solution_value = INF
        self.waiting: collections.deque[int] = collections.deque()
        self.nb_sent = 0
        self.phase = WorkerPhase.IDLE
        self.accepted = False
        self.deferred_acks: list[int] = []
        self.center_flag = Flag.OPEN
        self.push_credits = 0
        self.done = False
        self.stats = collections.Counter()
        self.solutions_found: list[int] = []
        self._last_best_sent = INF
        self._last_meta = None
        self._lock = threading.Lock()
        self.explorers = [Explorer(self, i) for i in range(self.config.threads)]
        self.started = time.monotonic()

    # ---- called from exploration threads

    def get_best(self) -> int:
        with self._lock:
            return min(self.local_best, self.global_best)

    def handle_solution(self, solution: Any) -> None:
        value = self.adapter.solution_value(solution)
        with self._lock:
            self.solutions_found.append(value)
            if value < self.local_best:
                self.local_best = value
                self.best_solution = solution
                self.best_solution_value = value
                self.stats["solutions"] += 1

    def on_register(self, k: int) -> None:
        if self.config.scheduler == CENTRAL:
            with self._lock:
                self.push_credits += 1

    # ---- helpers

    @property
    def running(self) -> bool:
        return any(e.busy for e in self.explorers)

    def has_pending(self) -> bool:
        return any(e.tree.has_pending() for e in self.explorers)

    def take_task(self):
        """Highest-priority pending task across this worker's trees."""
        best, best_p = None, None
        for e in self.explorers:
            p = e.tree.highest_pending_size()
            if p is not None and (best_p is None or p > best_p):
                best, best_p = e, p
        return None if best is None else best.tree.take_highest_priority()

    def seed(self, instance: Any) -> None:
        self.explorers[0].start(instance)
        self.phase = WorkerPhase.RUNNING
        self.stats["tasks_received"] += 1

    def _ack(self, ep, dest: int) -> None:
        if self.accepted and self.config.refusal:
            self.deferred_acks.append(dest)
        else:
            ep.send_async(dest, Tag.TASK_ACK)

    def _send_best(self, ep) -> None:
        with self._lock:
            lb = self.local_best
            if not (lb < self.global_best and lb != self._last_best_sent):
                return
            self._last_best_sent = lb
        ep.send_async(CENTER, Tag.BESTVAL_UPDATE, pack_i64(lb))
        self.stats["bestval_sent"] += 1

    def _report(self) -> dict:
        return {
            "rank": self.rank,
            "tasks_received": self.stats["tasks_received"],
            "tasks_sent": self.stats["tasks_sent"],
            "tasks_pushed": self.stats["tasks_pushed"],
            "solutions": self.stats["solutions"],
            "best_value": self.best_solution_value,
            "nodes": sum(e.nodes for e in self.explorers),
            "roots": sum(e.roots for e in self.explorers),
            "local_runs": sum(e.local_runs for e in self.explorers),
            "registered": sum(e.registered for e in self.explorers),
            "nb_sent": self.nb_sent,
            "premature_shutdown": self.stats["premature_shutdown"],
            "wall_time": time.monotonic() - self.started,
        }

    # ---- communication loop

    def update_worker_ipc(self, ep) -> None:
        """Drain the inbox, then report a better local value and metadata."""
        while (msg := ep.try_receive()) is not None:
            self._on_message(ep, msg)
            if self.done:
                return
        self._send_best(ep)
        if self.config.metadata and self.config.scheduler == SEMI:
            meta = max((e.tree.highest_pending_size() or 0) for e in self.explorers)
            if meta != self._last_meta:
                self._last_meta = meta
                ep.send_async(CENTER, Tag.METADATA, pack_i64(meta))

    def _on_message(self, ep, msg: Message) -> None:
        tag = msg.tag
        self.stats[f"recv_{tag.name}"] += 1
        if tag is Tag.BESTVAL_UPDATE:
            v = msg.value
            with self._lock:
                if v < self.local_best:
                    self.global_best = self.local_best = v
                elif v < self.global_best:
                    self.global_best = v
        elif tag is Tag.SEND_WORK:
            self.waiting.append(msg.value)
        elif tag is Tag.WORK:
            if self.running:
                raise ProtocolError(f"rank {self.rank}: WORK from {msg.source} while running")
            instance = self.adapter.deserialize(msg.payload)
            if self.config.scheduler == SEMI:
                ep.send_async(CENTER, Tag.STARTED_RUNNING)
            self._ack(ep, msg.source)
            self.explorers[0].start(instance)
            self.phase = WorkerPhase.RUNNING
            self.stats["tasks_received"] += 1
        elif tag is Tag.TASK_ACK:
            self.nb_sent -= 1
        elif tag is Tag.TERMINATE:
            self._send_best(ep)
            # RUNNING phase with dry explorers: AVAILABLE not yet announced
            busy = (self.nb_sent > 0 or self.running or self.has_pending()
                    or self.phase is WorkerPhase.RUNNING)
            if self.config.refusal and busy:
                ep.send_async(CENTER, Tag.TERMINATE_REFUSE)
                self.stats["terminations_refused"] += 1
            else:
                self.accepted = True
                if self.phase is WorkerPhase.IDLE:
                    self.phase = WorkerPhase.TERMINATING
                ep.send_async(CENTER, Tag.TERMINATE_ACCEPT)
        elif tag is Tag.TERMINATE_CANCEL:
            self.accepted = False
            if self.phase is WorkerPhase.TERMINATING:
                self.phase = WorkerPhase.IDLE
            for dest in self.deferred_acks:
                ep.send_async(dest, Tag.TASK_ACK)
            self.deferred_acks.clear()
        elif tag is Tag.SOLUTION_REQUEST:
            data = b"" if self.best_solution is None else self.adapter.serialize_solution(self.best_solution)
            ep.send_async(CENTER, Tag.SOLUTION, data)
        elif tag is Tag.SHUTDOWN:
            if self.running or self.has_pending() or self.nb_sent or self.deferred_acks:
                self.stats["premature_shutdown"] += 1
                log.error("rank %d shut down with unfinished work", self.rank)
            ep.send_async(CENTER, Tag.REPORT, json.dumps(self._report()).encode())
            self.done = True
        elif tag is Tag.QUEUE_FULL:
            self.center_flag = Flag.FULL
        elif tag is Tag.QUEUE_OPEN:
            self.center_flag = Flag.OPEN
        else:
            raise ProtocolError(f"rank {self.rank}: unexpected {tag.name} from {msg.source}")

    def update_pending_tasks(self, ep) -> None:
        """Feed waiting processes first, then idle local threads."""
        if self.config.scheduler == SEMI:
            while self.waiting:
                inst = self.take_task()
                if inst is None:
                    break
                dest = self.waiting.popleft()
                ep.send_async(dest, Tag.WORK, self.adapter.serialize(inst))
                self.nb_sent += 1
                self.stats["tasks_sent"] += 1
        else:
            while (self.push_credits > 0 and self.nb_sent == 0
                   and worker_push_policy(self.center_flag) == PUSH_TO_CENTER):
                inst = self.take_task()
                if inst is None:
                    break
                with self._lock:
                    self.push_credits -= 1
                data = pack_push(self.adapter.priority(inst), self.adapter.serialize(inst))
                ep.send_async(CENTER, Tag.TASK_PUSH, data)
                self.nb_sent += 1
                self.stats["tasks_pushed"] += 1
                self.stats["tasks_sent"] += 1
        for e in self.explorers:
            if e.busy:
                continue
            inst = self.take_task()
            if inst is None:
                break
            e.start(inst)
            self.stats["thread_handoffs"] += 1

    def check_idle(self, ep) -> bool:
        """Announce availability once every explorer has run dry."""
        if self.phase is WorkerPhase.RUNNING and not self.running:
            self._send_best(ep)
            self.phase = WorkerPhase.IDLE
            with self._lock:
                self.push_credits = 0
            ep.send_async(CENTER, Tag.AVAILABLE)
            self.stats["available_sent"] += 1
            return True
        return False

    def comm_step(self, ep) -> None:
        self.update_worker_ipc(ep)
        if self.done:
            return
        self.update_pending_tasks(ep)
        self.check_idle(ep)


def run_worker(ep, adapter: ProblemAdapter, config: WorkerConfig | None = None,
               seed_instance: Any = None, deadline: float | None = None,
               abort: threading.Event | None = None) -> dict:
    """Real-time worker: exploration threads plus this thread as the comm loop.

    ``abort`` lets a supervisor stop the worker early (raises TimeoutError).
    """
    worker = Worker(ep.rank, adapter, config)
    stop = threading.Event()
    wakes = [threading.Event() for _ in worker.explorers]
    errors: list[BaseException] = []

    def explore(e: Explorer, wake: threading.Event) -> None:
        try:
            while not stop.is_set():
                if not e.step():
                    wake.wait(0.05)
                    wake.clear()
        except BaseException as exc:  # surfaced by the comm loop
            errors.append(exc)
            stop.set()

    threads = [threading.Thread(target=explore, args=(e, w), daemon=True,
                                name=f"explorer-{ep.rank}.{e.index}")
               for e, w in zip(worker.explorers, wakes)]
    if seed_instance is not None:
        worker.seed(seed_instance)
    for t in threads:
        t.start()
    sleep = worker.config.idle_sleep
    try:
        while not worker.done:
            if errors:
                raise errors[0]
            if (deadline is not None and time.monotonic() > deadline) or \
                    (abort is not None and abort.is_set()):
                raise TimeoutError(f"rank {ep.rank}: wall-clock limit reached")
            before = [e.busy for e in worker.explorers]
            worker.comm_step(ep)
            for e, w, was in zip(worker.explorers, wakes, before):
                if e.busy and not was:
                    w.set()
            time.sleep(sleep)
    finally:
        stop.set()
        for w in wakes:
            w.set()
        for t in threads:
            t.join(timeout=5)
    return worker._report()
