"""One rank of a TCP run: ``python -m semicentral.node --rank R ...``.

Rank 0 runs the center and writes the final result as JSON; every other
rank runs a worker. All ranks read the instance file themselves, and only
rank 1 turns it into the seed task.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .runtime import final_to_json, make_center, run_center
from .transport import CENTER, TcpEndpoint, parse_rank_file
from .vcover import VertexCoverProblem, read_dimacs
from .worker import WorkerConfig, run_worker


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="semicentral.node")
    ap.add_argument("--rank", type=int, required=True)
    ap.add_argument("--rank-file", required=True)
    ap.add_argument("--instance", required=True)
    ap.add_argument("--encoding", default="optimized")
    ap.add_argument("--scheduler", default="semi")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--term-timeout", type=float, default=20.0)
    ap.add_argument("--policy", default="random")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--c", type=int, default=1000)
    ap.add_argument("--memory-limit", type=int, default=10 * 1024**3)
    ap.add_argument("--time-limit", type=float)
    ap.add_argument("--result")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format=f"[rank {args.rank}] %(message)s")

    with open(args.rank_file) as f:
        addresses = parse_rank_file(f.read())
    p = len(addresses) - 1
    g = read_dimacs(args.instance)
    adapter = VertexCoverProblem(g, args.encoding)
    deadline = None if args.time_limit is None else time.monotonic() + args.time_limit

    ep = TcpEndpoint(args.rank, addresses)
    ep.listen()
    ep.connect()
    try:
        if args.rank == CENTER:
            center = make_center(args.scheduler, p, adapter.max_branching_factor, args.policy,
                                 args.seed, args.term_timeout, args.c, args.memory_limit)
            final = run_center(ep, center, deadline)
            if args.result:
                with open(args.result, "w") as f:
                    json.dump(final_to_json(final), f)
        else:
            cfg = WorkerConfig(threads=args.threads, scheduler=args.scheduler)
            run_worker(ep, adapter, cfg, adapter.root() if args.rank == 1 else None, deadline)
    except TimeoutError as e:
        print(e, file=sys.stderr)
        return 2
    finally:
        ep.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
