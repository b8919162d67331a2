"""Timing comparison of the compiled and plain-Python backends.

Runs the same workloads in two subprocesses, one with POCHAOS_JIT=1 and one
with POCHAOS_JIT=0, and prints per-workload wall times with the speedup.
The flag is read at import time, hence the subprocesses. The first compiled
run pays numba's compilation cost once; it is cached on disk afterwards.

Usage: python3 benchmarks/bench_backends.py
"""

import json
import os
import subprocess
import sys

DRIVER = r"""
import json
import time

from pochaos import forward, realize, stats
from pochaos.battery import pair_battery
from pochaos.models import make_model
from pochaos.seeding import spawn_rng

kac = make_model("kac", lam=1.0)
toy = make_model("linear-toy")
F2 = pair_battery(1.0)[0]
qt = tuple(F2.query_times)


def bench(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


workloads = {
    "forward kac, N=300": lambda: forward.forward_paths(
        kac, 300, 1.0, qt, spawn_rng(1, "bench-fwd")
    ),
    "forward toy, N=300": lambda: forward.forward_paths(
        toy, 300, 1.0, qt, spawn_rng(2, "bench-fwd")
    ),
    "graph counts, 2000 replicas": lambda: stats.graph_loop_counts(
        2, 50, 1.0, 1.0, 2000, 3
    ),
    "yule sizes, 5000 replicas": lambda: stats.yule_sizes(1.0, 1.0, 5000, 4),
    "kac marginals, 5000 paths": lambda: realize.marginal_paths(
        kac, 5000, 1.0, qt, 5
    ),
    "wick pair sample, 500 replicas": lambda: stats.wick_path_sample(
        kac, 1.0, qt, 500, 6
    ),
    "expansion sample, 200 replicas": lambda: stats.delta_sample(
        kac, 2, 40, 1.0, F2, 200, 7
    ),
}

# warm up compilation outside the timed region
for fn in workloads.values():
    fn()

print(json.dumps({name: bench(fn) for name, fn in workloads.items()}))
"""


def run(jit_flag):
    env = dict(os.environ, POCHAOS_JIT=jit_flag)
    proc = subprocess.run(
        [sys.executable, "-c", DRIVER], env=env, capture_output=True, text=True
    )
    if proc.returncode != 0:
        sys.stderr.write(proc.stderr)
        raise SystemExit(1)
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    print("timing compiled backend (POCHAOS_JIT=1) ...")
    jit = run("1")
    print("timing plain backend (POCHAOS_JIT=0) ...")
    plain = run("0")
    width = max(len(k) for k in jit)
    print(f"\n{'workload':<{width}}  {'jit [s]':>10}  {'plain [s]':>10}  {'speedup':>8}")
    for name in jit:
        ratio = plain[name] / jit[name] if jit[name] > 0 else float("inf")
        print(f"{name:<{width}}  {jit[name]:>10.4f}  {plain[name]:>10.4f}  {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
