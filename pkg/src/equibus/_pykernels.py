"""Pure-Python fallback for the compiled kernels in ``_ckernels.pyx``.

Same algorithms, same tie-breaking (heap entries ordered by ``(key, node)``,
lowest index wins on equal distances), so both backends return bit-identical
results.
"""

import heapq
import math

import numpy as np


def dijkstra_rows(indptr, indices, weights, sources, cutoff, out):
    indptr = indptr.tolist()
    indices = indices.tolist()
    weights = weights.tolist()
    n = len(indptr) - 1
    inf = math.inf
    for row, source in enumerate(np.asarray(sources).tolist()):
        dist = [inf] * n
        done = [False] * n
        dist[source] = 0.0
        heap = [(0.0, source)]
        pop, push = heapq.heappop, heapq.heappush
        while heap:
            du, u = pop(heap)
            if done[u]:
                continue
            done[u] = True
            for e in range(indptr[u], indptr[u + 1]):
                v = indices[e]
                if done[v]:
                    continue
                nd = du + weights[e]
                if nd < dist[v] and nd <= cutoff:
                    dist[v] = nd
                    push(heap, (nd, v))
        out[row, :] = dist


def nn_order(dist):
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64), 0.0
    rows = dist.tolist()
    best_total = math.inf
    best = None
    for start in range(n):
        seen = [False] * n
        seen[start] = True
        path = [start]
        cur = start
        total = 0.0
        for _ in range(1, n):
            row = rows[cur]
            best_j, best_d = -1, math.inf
            for j in range(n):
                if not seen[j]:
                    d = row[j]
                    if best_j < 0 or d < best_d:
                        best_d, best_j = d, j
            seen[best_j] = True
            path.append(best_j)
            total = total + best_d
            cur = best_j
        if total < best_total:
            best_total, best = total, path
    return np.array(best, dtype=np.int64), float(best_total)


def accessibility_rows(indptr, indices, weights, sources, target_offset, target_weights,
                       t_max, out):
    n = len(indptr) - 1
    w = np.asarray(target_weights).tolist()
    dist = np.empty((1, n))
    for i, source in enumerate(np.asarray(sources).tolist()):
        dijkstra_rows(indptr, indices, weights, [source], t_max, dist)
        row = dist[0, target_offset:target_offset + len(w)].tolist()
        acc = 0.0
        for wj, d in zip(w, row):
            if d < t_max:
                acc = acc + wj * (1.0 - d / t_max)
        out[i] = acc
