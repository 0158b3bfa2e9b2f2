"""Hold WORK messages in flight and watch termination rounds get refused.

    python3 demos/race_walkthrough.py [seed]
"""
import logging
import random
import sys

from semicentral.sim import race_hook, simulate
from semicentral.vcover import VertexCoverProblem, gen_gnp, mvc_sequential

# unsound runs log an error per worker; the summary below is enough
logging.disable(logging.ERROR)
seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
g = gen_gnp(22, 0.25, seed)
print(f"graph n={g.n} m={g.m}, sequential cover size {mvc_sequential(g).size}")

for refusal in (True, False):
    caught = races = unsound = 0
    for s in range(40):
        r = simulate(VertexCoverProblem(g), g, 8, seed=s, timeout=3, refusal=refusal,
                     delay_hook=race_hook(random.Random(s), 0.5, 200))
        races += r.races
        caught += r.races_caught
        unsound += not r.sound
    label = "with refusal" if refusal else "refusal disabled"
    print(f"{label:17s}: {races} rounds opened with WORK in flight, {caught} refused, "
          f"{unsound}/40 runs ended before the space was explored")
