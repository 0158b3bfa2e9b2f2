"""Virtual-time makespan of both schedulers as the worker count grows.

Ticks, not seconds: this shows how the schedulers behave with many workers
on a machine that has only a core or two.

    python3 demos/virtual_scaling.py
"""
from semicentral.sim import simulate
from semicentral.vcover import VertexCoverProblem, gen_gnp

g = gen_gnp(90, 0.08, 3)
base = None
print(f"{'workers':>7} {'semi':>8} {'central':>8} {'semi speedup':>13}")
for p in (1, 2, 4, 8, 16, 32):
    ticks = {}
    for sched in ("semi", "central"):
        r = simulate(VertexCoverProblem(g), g, p, scheduler=sched, seed=1, timeout=5)
        ticks[sched] = r.ticks
    base = base or ticks["semi"]
    print(f"{p:>7} {ticks['semi']:>8} {ticks['central']:>8} {base / ticks['semi']:>13.2f}")
