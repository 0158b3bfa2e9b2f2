"""Real-time drivers: the center loop, an in-process thread cluster and a
multi-process TCP launcher."""
from __future__ import annotations

import json
import logging
import os
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from typing import Any

from .center import Center, Coordinator, FinalResult, Phase, dispatch
from .central_baseline import CentralCenter
from .problem import ProblemAdapter
from .transport import CENTER, LocalHub, format_rank_file, free_ports
from .worker import CENTRAL, SEMI, WorkerConfig, run_worker

log = logging.getLogger(__name__)

TERMINATE = "terminate"
RESUME = "resume"


@dataclass
class RunOutcome:
    final: FinalResult
    wall_seconds: float
    solution: Any = None
    worker_errors: list[str] = field(default_factory=list)


def make_center(scheduler: str, p: int, max_b: int = 2, policy: str = "random", seed: int = 0,
                timeout: float = 20.0, c: int = 1000, memory_limit: int = 10 * 1024**3,
                queue_order: str = "priority") -> Coordinator:
    if scheduler == SEMI:
        return Center(p, max_b=max_b, policy=policy, seed=seed, timeout=timeout)
    if scheduler == CENTRAL:
        return CentralCenter(p, c=c, memory_limit=memory_limit, order=queue_order, timeout=timeout)
    raise ValueError(f"unknown scheduler {scheduler!r}")


def try_termination(center: Coordinator, ep, timeout_s: float, sleep: float = 0.0005) -> str:
    """One blocking termination attempt: quiet wait, then a query round.

    Only meaningful while no worker is running. Messages that arrive in the
    meantime are handled normally. Returns ``"terminate"`` once the run has
    moved on to fetching the solution, ``"resume"`` otherwise.
    """
    if center.phase is not Phase.LOOP or not center.quiet():
        return RESUME
    saved = center.timeout
    center.timeout = timeout_s
    try:
        while True:
            now = time.monotonic()
            dispatch(ep, center.poll(now), center.stats)
            msg = ep.try_receive()
            if msg is not None:
                dispatch(ep, center.handle(msg, now), center.stats)
            if center.phase in (Phase.FETCH, Phase.REPORTS, Phase.DONE):
                return TERMINATE
            if center.phase is Phase.LOOP:
                return RESUME
            if msg is None:
                time.sleep(sleep)
    finally:
        center.timeout = saved


def run_center(ep, center: Coordinator, deadline: float | None = None,
               sleep: float = 0.0005, abort: threading.Event | None = None) -> FinalResult:
    """Receive, handle, emit until every worker has reported."""
    dispatch(ep, center.start(), center.stats)
    while not center.done:
        if (deadline is not None and time.monotonic() > deadline) or \
                (abort is not None and abort.is_set()):
            raise TimeoutError("center: wall-clock limit reached")
        now = time.monotonic()
        busy = False
        while (msg := ep.try_receive()) is not None:
            busy = True
            dispatch(ep, center.handle(msg, now), center.stats)
        dispatch(ep, center.poll(now), center.stats)
        if not busy:
            time.sleep(sleep)
    return center.result()


def run_local(adapter: ProblemAdapter, seed_instance: Any, p: int, scheduler: str = SEMI,
              threads: int = 1, timeout: float = 20.0, policy: str = "random", seed: int = 0,
              metadata: bool = False, time_limit: float | None = None, c: int = 1000,
              memory_limit: int = 10 * 1024**3) -> RunOutcome:
    """All ranks as threads of this process, talking over in-memory queues."""
    hub = LocalHub(p + 1)
    center = make_center(scheduler, p, adapter.max_branching_factor, policy, seed, timeout,
                         c, memory_limit)
    cfg = WorkerConfig(threads=threads, metadata=metadata, scheduler=scheduler)
    abort = threading.Event()
    errors: list[str] = []
    t0 = time.monotonic()
    deadline = None if time_limit is None else t0 + time_limit

    def body(r: int) -> None:
        try:
            run_worker(hub.endpoint(r), adapter, cfg, seed_instance if r == 1 else None,
                       deadline=deadline, abort=abort)
        except BaseException as e:
            errors.append(f"rank {r}: {type(e).__name__}: {e}")
            abort.set()

    ts = [threading.Thread(target=body, args=(r,), daemon=True, name=f"worker-{r}")
          for r in range(1, p + 1)]
    for t in ts:
        t.start()
    try:
        final = run_center(hub.endpoint(CENTER), center, deadline, abort=abort)
    except TimeoutError:
        abort.set()
        if errors and not any("TimeoutError" in e for e in errors):
            raise RuntimeError("; ".join(errors)) from None
        raise
    finally:
        for t in ts:
            t.join(timeout=10)
    wall = time.monotonic() - t0
    if errors:
        raise RuntimeError("; ".join(errors))
    sol = None if not final.solution else adapter.deserialize_solution(final.solution)
    return RunOutcome(final, wall, sol, errors)


def final_to_json(final: FinalResult) -> dict:
    return {
        "best_val": final.best_val,
        "best_holder": final.best_holder,
        "solution": None if final.solution is None else final.solution.hex(),
        "stats": final.stats,
        "reports": {str(k): v for k, v in final.reports.items()},
        "best_trace": final.best_trace,
    }


def final_from_json(d: dict) -> FinalResult:
    sol = d["solution"]
    return FinalResult(d["best_val"], d["best_holder"], None if sol is None else bytes.fromhex(sol),
                       d["stats"], {int(k): v for k, v in d["reports"].items()}, d["best_trace"])


def run_tcp(instance_path: str, p: int, scheduler: str = SEMI, encoding: str = "optimized",
            threads: int = 1, timeout: float = 20.0, policy: str = "random", seed: int = 0,
            time_limit: float | None = None, host: str = "127.0.0.1", c: int = 1000,
            memory_limit: int = 10 * 1024**3, rank_file: str | None = None) -> RunOutcome:
    """Spawn ``p + 1`` processes on this machine connected by TCP.

    The rank file is written to a temporary directory unless ``rank_file``
    names an existing one to reuse.
    """
    with tempfile.TemporaryDirectory(prefix="semicentral-") as tmp:
        if rank_file is None:
            rank_file = os.path.join(tmp, "ranks.txt")
            ports = free_ports(p + 1, host)
            with open(rank_file, "w") as f:
                f.write(format_rank_file((host, port) for port in ports))
        result_path = os.path.join(tmp, "result.json")
        base = [sys.executable, "-m", "semicentral.node", "--rank-file", rank_file,
                "--instance", str(instance_path), "--encoding", encoding,
                "--scheduler", scheduler, "--threads", str(threads),
                "--term-timeout", str(timeout), "--policy", policy, "--seed", str(seed),
                "--c", str(c), "--memory-limit", str(memory_limit)]
        if time_limit is not None:
            base += ["--time-limit", str(time_limit)]
        t0 = time.monotonic()
        procs = []
        for r in range(p + 1):
            extra = ["--result", result_path] if r == CENTER else []
            procs.append(subprocess.Popen(base + ["--rank", str(r)] + extra,
                                          stdout=subprocess.DEVNULL, stderr=subprocess.PIPE))
        limit = None if time_limit is None else time_limit + 30
        timed_out = False
        try:
            procs[0].wait(timeout=limit)
        except subprocess.TimeoutExpired:
            timed_out = True
        wall = time.monotonic() - t0
        for pr in procs[1:]:
            try:
                pr.wait(timeout=0 if timed_out else 30)
            except subprocess.TimeoutExpired:
                pr.kill()
        if timed_out:
            procs[0].kill()
        errs = [(r, pr.returncode, pr.stderr.read().decode(errors="replace"))
                for r, pr in enumerate(procs)]
        for pr in procs:
            pr.stderr.close()
        if timed_out or procs[0].returncode == 2:
            raise TimeoutError("tcp run exceeded its time limit")
        bad = [f"rank {r} exited {code}: {msg.strip()[-500:]}" for r, code, msg in errs if code]
        if bad:
            raise RuntimeError("; ".join(bad))
        with open(result_path) as f:
            final = final_from_json(json.load(f))
    return RunOutcome(final, wall)
