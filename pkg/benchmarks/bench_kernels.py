"""Compare the compiled round kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rounds 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from ratio_consensus import graph, kernels, simulator
from ratio_consensus.protocol import init_average_consensus

CASES = [
    ("paper5 single run", lambda: graph.paper5(), 1),
    ("random n=50 single run", lambda: graph.random_strongly_connected(50, 0.5, 7), 1),
    ("cycle-chord:4 x 2000 replicas", lambda: graph.builtin_graph("cycle-chord:4"), 2000),
]


def time_case(g, replicas, rounds, backend, repeat):
    values = np.linspace(-1.0, 1.0, g.n)
    model = simulator.DropModel(q=0.5)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        if replicas == 1:
            simulator.run(init_average_consensus(values), g, model, 0, rounds, backend=backend, audit=False)
        else:
            simulator.run_replicas(g, model, values, np.ones(g.n), rounds, replicas, 0, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rounds", type=int, default=20_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.compiled_advance is None:
        print("compiled kernel not built; only the fallback can be timed")
    print(f"{'case':34s} {'rounds':>7s} {'python s':>9s} {'compiled s':>11s} {'speedup':>8s}")
    for name, make, replicas in CASES:
        g = make()
        rounds = args.rounds if replicas == 1 else max(1, args.rounds // 1000)
        t_py = time_case(g, replicas, rounds, "python", args.repeat)
        if kernels.compiled_advance is None:
            print(f"{name:34s} {rounds:7d} {t_py:9.3f} {'-':>11s} {'-':>8s}")
            continue
        t_c = time_case(g, replicas, rounds, "compiled", args.repeat)
        print(f"{name:34s} {rounds:7d} {t_py:9.3f} {t_c:11.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
