"""Single-process, virtual-time cluster for protocol testing.

Every rank lives in this process. One tick delivers due messages, runs one
center iteration, then gives each worker (in a freshly shuffled order) one
communication step and a random number of exploration steps. Everything
is seeded, so a run is a pure function of its arguments.
"""
from __future__ import annotations

import collections
import random
import time
from dataclasses import dataclass, field
from typing import Any, Callable

from .center import Center, FinalResult, Phase, dispatch
from .central_baseline import CentralCenter
from .problem import ProblemAdapter
from .transport import CENTER, SimNetwork, Tag
from .worker import CENTRAL, SEMI, Worker, WorkerConfig


class SimDeadlock(RuntimeError):
    pass


@dataclass
class SimResult:
    best_val: int
    solution: Any
    final: FinalResult
    ticks: int
    audit: dict
    rounds: list[dict] = field(default_factory=list)
    max_queue_len: int = 0

    @property
    def races(self) -> int:
        return sum(1 for r in self.rounds if r["work_in_flight"])

    @property
    def races_caught(self) -> int:
        return sum(1 for r in self.rounds if r["work_in_flight"] and not r["accepted"])

    @property
    def sound(self) -> bool:
        return self.audit["ok"]


class SimCluster:
    """Center plus ``p`` workers over a :class:`SimNetwork`.

    ``steps`` bounds the exploration steps per worker thread per tick; the
    actual count is drawn uniformly from ``[0, steps]`` to vary relative
    worker speeds.
    """

    def __init__(self, adapter: ProblemAdapter, seed_instance: Any, p: int,
                 scheduler: str = SEMI, seed: int = 0, delay: tuple[int, int] = (1, 10),
                 delay_hook: Callable | None = None, timeout: int = 20, steps: int = 3,
                 threads: int = 1, refusal: bool = True, policy: str = "random",
                 metadata: bool = False, waiting_lists: bool = True, c: int = 1000,
                 memory_limit: int = 10 * 1024**3, queue_order: str = "priority",
                 max_ticks: int = 2_000_000, keep_trace: bool = False,
                 deadline: float | None = None):
        if p < 1:
            raise ValueError("need at least one worker")
        self.adapter = adapter
        self.p = p
        self.scheduler = scheduler
        self.rng = random.Random(seed * 7919 + 1)
        self.steps = steps
        self.max_ticks = max_ticks
        self.deadline = deadline
        self.net = SimNetwork(p + 1, seed=seed, delay=delay, delay_hook=delay_hook,
                              keep_trace=keep_trace)
        if scheduler == SEMI:
            self.center = Center(p, max_b=adapter.max_branching_factor, policy=policy,
                                 seed=seed, timeout=timeout, waiting_lists=waiting_lists)
        elif scheduler == CENTRAL:
            self.center = CentralCenter(p, c=c, memory_limit=memory_limit,
                                        order=queue_order, timeout=timeout)
        else:
            raise ValueError(f"unknown scheduler {scheduler!r}")
        cfg = WorkerConfig(threads=threads, metadata=metadata, refusal=refusal,
                           scheduler=scheduler)
        self.workers = {r: Worker(r, adapter, cfg) for r in range(1, p + 1)}
        self.workers[1].seed(seed_instance)
        self.rounds: list[dict] = []
        self.max_queue_len = 0
        self.acyclic_violations = 0

    def _center_step(self) -> None:
        center, ep, now = self.center, self.net.endpoint(CENTER), self.net.now
        while (msg := ep.try_receive()) is not None:
            before = center.phase
            dispatch(ep, center.handle(msg, now), center.stats)
            if before is Phase.QUERY and center.phase is not Phase.QUERY:
                self.rounds[-1]["accepted"] = center.phase is not Phase.LOOP
        before = center.phase
        dispatch(ep, center.poll(now), center.stats)
        if before is not Phase.QUERY and center.phase is Phase.QUERY:
            self.rounds.append({"tick": now, "accepted": None,
                                "work_in_flight": self.net.in_flight_tags[Tag.WORK] > 0})
        if self.scheduler == SEMI:
            st = center.state
            if not st.is_acyclic():
                self.acyclic_violations += 1
        else:
            self.max_queue_len = max(self.max_queue_len, len(center.state.queue))

    def run(self) -> SimResult:
        net = self.net
        dispatch(net.endpoint(CENTER), self.center.start(), self.center.stats)
        order = list(self.workers)
        while not (self.center.done and all(w.done for w in self.workers.values())):
            if net.now >= self.max_ticks:
                raise SimDeadlock(f"no termination after {net.now} ticks")
            if self.deadline is not None and net.now % 256 == 0 and time.monotonic() > self.deadline:
                raise TimeoutError("simulation exceeded its wall-clock limit")
            net.sim_advance(1)
            self._center_step()
            self.rng.shuffle(order)
            for r in order:
                w = self.workers[r]
                if w.done:
                    continue
                ep = net.endpoint(r)
                w.comm_step(ep)
                if w.done:
                    net.dropped += len(ep.inbox)
                    ep.inbox.clear()
                    ep.closed = True
                    continue
                for e in w.explorers:
                    for _ in range(self.rng.randint(0, self.steps)):
                        if not e.step():
                            break
        # let stragglers land so the audit sees them
        while net.in_flight():
            net.sim_advance(1)
        final = self.center.result()
        sol = None if final.solution in (None, b"") else self.adapter.deserialize_solution(final.solution)
        return SimResult(final.best_val, sol, final, net.now, self.audit(final),
                         self.rounds, self.max_queue_len)

    def audit(self, final: FinalResult) -> dict:
        """Task conservation and clean-exit checks."""
        ws = self.workers.values()
        created = 1 + sum(e.registered for w in ws for e in w.explorers)
        explored = sum(e.roots + e.local_runs for w in ws for e in w.explorers)
        leftovers = sum(1 for w in ws for e in w.explorers if not e.tree.is_empty() or e.busy)
        nb_sent = sum(w.nb_sent for w in ws)
        premature = sum(w.stats["premature_shutdown"] for w in ws)
        found = [v for w in ws for v in w.solutions_found]
        queue_left = len(self.center.state.queue) if self.scheduler == CENTRAL else 0
        out = {
            "created": created,
            "explored": explored,
            "leftover_trees": leftovers,
            "nb_sent": nb_sent,
            "dropped": self.net.dropped,
            "premature_shutdown": premature,
            "queue_left": queue_left,
            "min_found": min(found) if found else None,
            "best_trace_monotone": all(a > b for a, b in zip(final.best_trace, final.best_trace[1:])),
            "acyclic_violations": self.acyclic_violations,
            "failed_requests": final.stats.get("failed_requests", 0),
        }
        out["ok"] = (created == explored and leftovers == 0 and nb_sent == 0
                     and self.net.dropped == 0 and premature == 0 and queue_left == 0
                     and out["best_trace_monotone"] and self.acyclic_violations == 0
                     and (not found or min(found) == final.best_val))
        return out


def simulate(adapter: ProblemAdapter, seed_instance: Any, p: int, **kw) -> SimResult:
    return SimCluster(adapter, seed_instance, p, **kw).run()


def race_hook(rng: random.Random, chance: float, extra: int) -> Callable:
    """Delay hook that occasionally holds a WORK message for ``extra`` ticks."""
    counts = collections.Counter()

    def hook(src: int, dest: int, tag: Tag, drawn: int) -> int:
        if tag is Tag.WORK and rng.random() < chance:
            counts["delayed"] += 1
            return drawn + extra
        return drawn

    hook.counts = counts
    return hook
