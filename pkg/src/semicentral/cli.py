"""Command line: ``semicentral {solve,gen,verify,bench}``.

Exit codes: 0 success, 1 failure (including bad arguments), 2 time limit hit.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from .runtime import run_local, run_tcp
from .sim import SimDeadlock, simulate
from .vcover import (ENCODINGS, Graph, VertexCoverProblem, brute_force_mvc, gen_gnp,
                     mvc_sequential, parse_dimacs, popcount, read_dimacs, to_dimacs)

log = logging.getLogger("semicentral")

EXIT_OK, EXIT_FAIL, EXIT_TIMEOUT = 0, 1, 2

COLUMNS = ["instance", "n", "m", "scheduler", "encoding", "workers", "wall_seconds", "mvc_size",
           "tasks_sent", "bestval_broadcasts", "failed_requests", "termination_attempts"]
BENCH_COLUMNS = COLUMNS + ["speedup"]
SCHEDULERS = ("sequential", "semi", "central")
TRANSPORTS = ("sim", "local", "tcp")
INSTANCE_SUFFIXES = (".dimacs", ".col", ".clq", ".txt")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FAIL, f"{self.prog}: error: {message}\n")


def solve(g: Graph, *, scheduler="semi", encoding="optimized", workers=1, threads=1,
          transport="sim", seed=0, time_limit=None, policy="random", term_timeout=None,
          path=None) -> dict:
    """Run one configuration and return its CSV row (plus ``cover``).

    ``term_timeout`` is in ticks for the sim transport (default 20) and in
    seconds otherwise (default 20). Raises TimeoutError past ``time_limit``.
    """
    if scheduler not in SCHEDULERS:
        raise UsageError(f"unknown scheduler {scheduler!r}")
    if encoding not in ENCODINGS:
        raise UsageError(f"unknown encoding {encoding!r}")
    if transport not in TRANSPORTS:
        raise UsageError(f"unknown transport {transport!r}")
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    if scheduler == "sequential" and workers != 1:
        raise UsageError("the sequential scheduler runs exactly one worker")
    if transport == "tcp" and path is None:
        raise UsageError("tcp transport needs an instance file")
    row = {"instance": "", "n": g.n, "m": g.m, "scheduler": scheduler, "encoding": encoding,
           "workers": workers, "tasks_sent": 0, "bestval_broadcasts": 0, "failed_requests": 0,
           "termination_attempts": 0}
    t0 = time.monotonic()
    deadline = None if time_limit is None else t0 + time_limit
    if scheduler == "sequential":
        res = mvc_sequential(g, deadline=deadline)
        row["mvc_size"], cover, stats = res.size, res.cover, {}
        wall = time.monotonic() - t0
    else:
        adapter = VertexCoverProblem(g, encoding)
        if transport == "sim":
            ticks = 20 if term_timeout is None else int(term_timeout)
            r = simulate(adapter, g, workers, scheduler=scheduler, seed=seed, timeout=ticks,
                         policy=policy, threads=threads, deadline=deadline)
            final, cover = r.final, r.solution
            wall = time.monotonic() - t0
        else:
            tt = 20.0 if term_timeout is None else float(term_timeout)
            if transport == "local":
                out = run_local(adapter, g, workers, scheduler=scheduler, threads=threads,
                                timeout=tt, policy=policy, seed=seed, time_limit=time_limit)
            else:
                out = run_tcp(path, workers, scheduler=scheduler, encoding=encoding,
                              threads=threads, timeout=tt, policy=policy, seed=seed,
                              time_limit=time_limit)
            final, wall = out.final, out.wall_seconds
            cover = None if not final.solution else adapter.deserialize_solution(final.solution)
        stats = final.stats
        row["mvc_size"] = final.best_val
        row["tasks_sent"] = sum(rep.get("tasks_sent", 0) for rep in final.reports.values())
    row["bestval_broadcasts"] = stats.get("bestval_broadcasts", 0)
    row["failed_requests"] = stats.get("failed_requests", 0)
    row["termination_attempts"] = stats.get("termination_attempts", 0)
    row["wall_seconds"] = f"{wall:.4f}"
    if cover is not None and (not g.is_cover(cover) or popcount(cover) != row["mvc_size"]):
        raise RuntimeError("returned solution is not a vertex cover of the reported size")
    if cover is None and g.m > 0:
        raise RuntimeError("no solution was found")
    row["cover"] = cover
    return row


def timeout_row(g: Graph, name: str, scheduler, encoding, workers) -> dict:
    row = {c: "TIMEOUT" for c in COLUMNS}
    row.update(instance=name, n=g.n, m=g.m, scheduler=scheduler, encoding=encoding,
               workers=workers)
    return row


def write_rows(rows, columns, out=None, path=None) -> None:
    if out is not None:
        w = csv.DictWriter(out, columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if path:
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="") as f:
            w = csv.DictWriter(f, columns, extrasaction="ignore", lineterminator="\n")
            if new:
                w.writeheader()
            w.writerows(rows)


def _load(args) -> tuple[Graph, str, str | None]:
    if args.instance and args.gen:
        raise UsageError("give either an instance file or --gen, not both")
    if args.instance:
        return read_dimacs(args.instance), Path(args.instance).name, args.instance
    if args.gen:
        try:
            n, p, seed = args.gen.split(",")
            g = gen_gnp(int(n), float(p), int(seed))
        except ValueError as e:
            raise UsageError(f"--gen expects n,p,seed ({e})") from None
        return g, f"gnp_{n}_{p}_{seed}", None
    raise UsageError("an instance file or --gen is required")


def _materialize(g: Graph, name: str, path: str | None, tmpdir: str) -> str:
    if path is not None:
        return path
    path = os.path.join(tmpdir, name + ".dimacs")
    with open(path, "w") as f:
        f.write(to_dimacs(g))
    return path


def cmd_solve(args) -> int:
    g, name, path = _load(args)
    with tempfile.TemporaryDirectory() as tmp:
        if args.transport == "tcp":
            path = _materialize(g, name, path, tmp)
        try:
            row = solve(g, scheduler=args.scheduler, encoding=args.encoding, workers=args.workers,
                        threads=args.threads, transport=args.transport, seed=args.seed,
                        time_limit=args.time_limit, policy=args.policy,
                        term_timeout=args.term_timeout, path=path)
            code = EXIT_OK
        except TimeoutError:
            row, code = timeout_row(g, name, args.scheduler, args.encoding, args.workers), EXIT_TIMEOUT
    row["instance"] = name
    write_rows([row], COLUMNS, sys.stdout, args.csv)
    if args.print_cover and code == EXIT_OK and row["cover"] is not None:
        print("cover:", " ".join(str(v + 1) for v in range(g.n) if row["cover"] >> v & 1))
    return code


def gen_files(n: int, p: float, count: int, seed: int, outdir) -> list[Path]:
    """Write ``count`` G(n, p) graphs; file ``i`` uses the seed sequence (seed, i)."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        ss = np.random.SeedSequence([seed, i])
        g = gen_gnp(n, p, ss)
        path = out / f"gnp_n{n}_s{seed}_{i:04d}.dimacs"
        path.write_text(to_dimacs(g, f"G(n={n}, p={p!r}) seed={seed} index={i}"))
        paths.append(path)
    return paths


def _parse_prob(text: str, n: int) -> float:
    """``0.1``, or ``d/(n-1)`` written as ``4/(n-1)``."""
    text = text.replace(" ", "")
    if "/" in text:
        num, den = text.split("/", 1)
        den = den.strip("()")
        if den == "n-1":
            return float(num) / (n - 1)
        if den == "n":
            return float(num) / n
        return float(num) / float(den)
    return float(text)


def cmd_gen(args) -> int:
    try:
        p = _parse_prob(args.p, args.n)
    except (ValueError, ZeroDivisionError) as e:
        raise UsageError(f"bad edge probability {args.p!r}: {e}") from None
    try:
        paths = gen_files(args.n, p, args.count, args.seed, args.outdir)
    except OSError as e:
        print(f"cannot write to {args.outdir}: {e}", file=sys.stderr)
        return EXIT_FAIL
    print(f"wrote {len(paths)} files to {args.outdir}")
    return EXIT_OK


def default_solvers(workers: int = 4, seed: int = 0) -> dict:
    """The configurations checked by ``verify``: name -> graph -> cover size."""
    solvers = {"sequential": lambda g: mvc_sequential(g).size}
    for sched in ("semi", "central"):
        for enc in ENCODINGS:
            solvers[f"{sched}+{enc}"] = (
                lambda g, s=sched, e=enc: simulate(VertexCoverProblem(g, e), g, workers,
                                                   scheduler=s, seed=seed).best_val)
    return solvers


def verify_dir(directory, solvers: dict | None = None, max_n: int = 26) -> list[dict]:
    """Solve every instance in ``directory`` with each solver and the oracle."""
    solvers = default_solvers() if solvers is None else solvers
    files = sorted(p for p in Path(directory).iterdir()
                   if p.is_file() and p.suffix in INSTANCE_SUFFIXES)
    report = []
    for path in files:
        g = parse_dimacs(path.read_text())
        if g.n > max_n:
            report.append({"instance": path.name, "oracle": None, "results": {},
                           "ok": False, "error": f"n={g.n} exceeds oracle limit {max_n}"})
            continue
        want = brute_force_mvc(g, max_n=max_n)
        got = {name: fn(g) for name, fn in solvers.items()}
        report.append({"instance": path.name, "oracle": want, "results": got,
                       "ok": all(v == want for v in got.values()), "error": None})
    return report


def cmd_verify(args) -> int:
    if not os.path.isdir(args.dir):
        print(f"not a directory: {args.dir}", file=sys.stderr)
        return EXIT_FAIL
    report = verify_dir(args.dir, default_solvers(args.workers, args.seed))
    bad = 0
    for r in report:
        if r["error"]:
            print(f"{r['instance']}: ERROR {r['error']}")
        else:
            detail = " ".join(f"{k}={v}" for k, v in r["results"].items())
            print(f"{r['instance']}: oracle={r['oracle']} {detail} {'ok' if r['ok'] else 'MISMATCH'}")
        bad += not r["ok"]
    print(f"{len(report)} instances, {bad} failures")
    return EXIT_OK if bad == 0 else EXIT_FAIL


def add_speedups(rows: list[dict], seq_time: float | None = None) -> list[dict]:
    """speedup = reference time / wall time, reference = the workers=1 row of
    the same scheduler and encoding unless ``seq_time`` is supplied."""
    ref = {}
    for r in rows:
        if str(r["workers"]) == "1" and r["wall_seconds"] != "TIMEOUT":
            ref[(r["scheduler"], r["encoding"])] = float(r["wall_seconds"])
    for r in rows:
        base = seq_time if seq_time is not None else ref.get((r["scheduler"], r["encoding"]))
        if base is None or r["wall_seconds"] == "TIMEOUT":
            r["speedup"] = ""
        else:
            r["speedup"] = f"{base / max(float(r['wall_seconds']), 1e-9):.3f}"
    return rows


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None


def cmd_bench(args) -> int:
    g, name, path = _load(args)
    grid = [(s, e, w) for s in args.schedulers.split(",") for e in args.encodings.split(",")
            for w in _int_list(args.workers)]
    rows, code = [], EXIT_OK
    with tempfile.TemporaryDirectory() as tmp:
        if args.transport == "tcp":
            path = _materialize(g, name, path, tmp)
        for sched, enc, w in grid:
            try:
                row = solve(g, scheduler=sched, encoding=enc, workers=w, threads=args.threads,
                            transport=args.transport, seed=args.seed, time_limit=args.time_limit,
                            policy=args.policy, term_timeout=args.term_timeout, path=path)
            except TimeoutError:
                row, code = timeout_row(g, name, sched, enc, w), EXIT_TIMEOUT
            row["instance"] = name
            rows.append(row)
            log.info("%s %s workers=%d: %s s", sched, enc, w, row["wall_seconds"])
    add_speedups(rows, args.seq_time)
    write_rows(rows, BENCH_COLUMNS, sys.stdout, args.csv)
    return code


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="semicentral", description="Distributed branch-and-bound for vertex cover.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def run_flags(sp, bench=False):
        sp.add_argument("instance", nargs="?", help="DIMACS edge file")
        sp.add_argument("--gen", metavar="N,P,SEED", help="use a generated G(n,p) graph instead")
        sp.add_argument("--transport", choices=TRANSPORTS, default="sim")
        sp.add_argument("--threads", type=int, default=1, help="exploration threads per worker")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--time-limit", type=float, help="wall-clock limit in seconds")
        sp.add_argument("--policy", choices=("random", "metadata"), default="random")
        sp.add_argument("--term-timeout", type=float,
                        help="quiet period before a termination round (ticks for sim, else seconds; default 20)")
        sp.add_argument("--csv", help="append rows to this CSV file")
        if not bench:
            sp.add_argument("--scheduler", choices=SCHEDULERS, default="semi")
            sp.add_argument("--encoding", choices=ENCODINGS, default="optimized")
            sp.add_argument("--workers", type=int, default=1)
            sp.add_argument("--print-cover", action="store_true")

    sp = sub.add_parser("solve", help="solve one instance")
    run_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("gen", help="generate G(n,p) DIMACS files")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", required=True, help="edge probability, e.g. 0.05 or 4/(n-1)")
    sp.add_argument("--count", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--outdir", required=True)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("verify", help="check every solver against brute force")
    sp.add_argument("dir")
    sp.add_argument("--workers", type=int, default=4)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("bench", help="time a grid of configurations")
    run_flags(sp, bench=True)
    sp.add_argument("--schedulers", default="semi,central")
    sp.add_argument("--encodings", default="optimized")
    sp.add_argument("--workers", default="1,2,4,8")
    sp.add_argument("--seq-time", type=float, help="sequential reference time in seconds")
    sp.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # usage errors and --help
        return e.code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"semicentral: error: {e}", file=sys.stderr)
        return EXIT_FAIL
    except (OSError, ValueError, RuntimeError, SimDeadlock) as e:
        print(f"semicentral: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
