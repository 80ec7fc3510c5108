"""Compare the compiled and pure-Python kernel backends.

Times the accessibility sweep (one Dijkstra per centroid), plain Dijkstra rows
and the nearest-neighbour line ordering on generated cities, and checks that
both backends return bit-identical results.

    python benchmarks/bench_kernels.py [--sizes 6x6,12x6] [--repeat 3]
"""

import argparse
import time

import numpy as np

from equibus import kernels
from equibus.mdp import StateEvaluator, random_state
from equibus.territory import city_scenario


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def bench_city(width, height, repeat):
    s = city_scenario(width, height, 0, metro_lines=4, num_lines=3)
    ev = StateEvaluator(s)
    _, g = ev.realize(random_state(s, 0))
    indptr, indices, w = g.csr
    centroids = np.arange(g.n_centroids)
    weights = np.array([p.weight for p in s.pois])
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, size=(40, 2))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))

    cases = {
        "accessibility": lambda b: kernels.accessibility(
            indptr, indices, w, centroids, g.poi_offset, weights, s.t_max,
            backend=b),
        "dijkstra": lambda b: kernels.dijkstra(indptr, indices, w, centroids,
                                               backend=b),
        "nn_order": lambda b: kernels.nn_order(dist, backend=b)[0],
    }
    rows = []
    for name, fn in cases.items():
        timings, outputs = {}, {}
        for backend in sorted(kernels.BACKENDS):
            timings[backend], outputs[backend] = best_of(lambda: fn(backend), repeat)
        same = all(np.array_equal(outputs["python"], o) for o in outputs.values())
        rows.append((f"{width}x{height}", name, timings, same))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="6x6,12x6")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    print(f"active backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    header = f"{'city':>6} {'kernel':>14} " + " ".join(f"{b:>10}" for b in backends)
    if "cython" in backends:
        header += f" {'speedup':>8}"
    print(header + "  identical")
    for size in args.sizes.split(","):
        w, h = (int(x) for x in size.split("x"))
        for city, name, t, same in bench_city(w, h, args.repeat):
            line = f"{city:>6} {name:>14} " + " ".join(f"{t[b] * 1e3:>8.2f}ms" for b in backends)
            if "cython" in t:
                line += f" {t['python'] / t['cython']:>7.1f}x"
            print(line + f"  {same}")


if __name__ == "__main__":
    main()
