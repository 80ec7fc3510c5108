# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: label-setting shortest paths and nearest-neighbour
line ordering.  Must stay result-identical to ``_pykernels``."""

from libc.stdint cimport int64_t
from libc.stdlib cimport malloc, free
from libc.string cimport memset
from libc.math cimport INFINITY

import numpy as np


cdef struct HeapItem:
    double key
    int64_t node


cdef inline bint _less(HeapItem a, HeapItem b) noexcept nogil:
    return a.key < b.key or (a.key == b.key and a.node < b.node)


cdef inline void _push(HeapItem* heap, int64_t* size, double key, int64_t node) noexcept nogil:
    cdef int64_t i = size[0]
    cdef int64_t parent
    cdef HeapItem item
    item.key = key
    item.node = node
    size[0] += 1
    while i > 0:
        parent = (i - 1) >> 1
        if _less(item, heap[parent]):
            heap[i] = heap[parent]
            i = parent
        else:
            break
    heap[i] = item


cdef inline HeapItem _pop(HeapItem* heap, int64_t* size) noexcept nogil:
    cdef HeapItem top = heap[0]
    cdef HeapItem last
    cdef int64_t i = 0, child, n
    size[0] -= 1
    n = size[0]
    if n > 0:
        last = heap[n]
        while True:
            child = 2 * i + 1
            if child >= n:
                break
            if child + 1 < n and _less(heap[child + 1], heap[child]):
                child += 1
            if _less(heap[child], last):
                heap[i] = heap[child]
                i = child
            else:
                break
        heap[i] = last
    return top


cdef int _one_source(const int64_t[::1] indptr, const int64_t[::1] indices,
                     const double[::1] weights, int64_t source, double cutoff,
                     double[::1] dist, HeapItem* heap, char* done) noexcept nogil:
    cdef int64_t n = indptr.shape[0] - 1
    cdef int64_t size = 0
    cdef int64_t u, v, e
    cdef double du, nd
    cdef HeapItem item
    for u in range(n):
        dist[u] = INFINITY
    memset(done, 0, n)
    dist[source] = 0.0
    _push(heap, &size, 0.0, source)
    while size > 0:
        item = _pop(heap, &size)
        u = item.node
        if done[u]:
            continue
        done[u] = 1
        du = item.key
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if done[v]:
                continue
            nd = du + weights[e]
            if nd < dist[v] and nd <= cutoff:
                dist[v] = nd
                _push(heap, &size, nd, v)
    return 0


def dijkstra_rows(const int64_t[::1] indptr, const int64_t[::1] indices,
                  const double[::1] weights, const int64_t[::1] sources,
                  double cutoff, double[:, ::1] out):
    """Fill ``out[i]`` with shortest distances from ``sources[i]``.

    Nodes farther than ``cutoff`` are left at +inf.  Releases the GIL.
    """
    cdef int64_t n = indptr.shape[0] - 1
    cdef int64_t m = indices.shape[0]
    cdef int64_t i
    cdef HeapItem* heap = <HeapItem*> malloc((m + 1) * sizeof(HeapItem))
    cdef char* done = <char*> malloc(n + 1)
    if heap == NULL or done == NULL:
        free(heap)
        free(done)
        raise MemoryError()
    try:
        with nogil:
            for i in range(sources.shape[0]):
                _one_source(indptr, indices, weights, sources[i], cutoff, out[i], heap, done)
    finally:
        free(heap)
        free(done)


def nn_order(const double[:, ::1] dist):
    """Best-of-all-starts nearest-neighbour open path over a distance matrix.

    Returns ``(order, length)``; ties go to the lowest index, both for the
    next hop and for the choice of start.
    """
    cdef Py_ssize_t n = dist.shape[0]
    cdef Py_ssize_t start, step, j, cur, best_j
    cdef double total, best_total = INFINITY, best_d, d
    order_out = np.empty(n, dtype=np.int64)
    tmp = np.empty(n, dtype=np.int64)
    cdef int64_t[::1] best = order_out
    cdef int64_t[::1] path = tmp
    cdef char* seen = <char*> malloc(n + 1)
    if seen == NULL:
        raise MemoryError()
    try:
        with nogil:
            for start in range(n):
                memset(seen, 0, n)
                seen[start] = 1
                path[0] = start
                cur = start
                total = 0.0
                for step in range(1, n):
                    best_j = -1
                    best_d = INFINITY
                    for j in range(n):
                        if not seen[j]:
                            d = dist[cur, j]
                            if best_j < 0 or d < best_d:
                                best_d = d
                                best_j = j
                    seen[best_j] = 1
                    path[step] = best_j
                    total = total + best_d
                    cur = best_j
                if total < best_total:
                    best_total = total
                    for j in range(n):
                        best[j] = path[j]
    finally:
        free(seen)
    if n == 0:
        best_total = 0.0
    return order_out, float(best_total)


def accessibility_rows(const int64_t[::1] indptr, const int64_t[::1] indices,
                       const double[::1] weights, const int64_t[::1] sources,
                       int64_t target_offset, const double[::1] target_weights,
                       double t_max, double[::1] out):
    """``out[i] = sum_j w_j * max(0, 1 - d(sources[i], target_offset + j) / t_max)``.

    Shortest paths are pruned at ``t_max``; terms are added in target order.
    """
    cdef int64_t n = indptr.shape[0] - 1
    cdef int64_t m = indices.shape[0]
    cdef int64_t i, j
    cdef double acc, d
    dist_buf = np.empty(n, dtype=np.float64)
    cdef double[::1] dist = dist_buf
    cdef HeapItem* heap = <HeapItem*> malloc((m + 1) * sizeof(HeapItem))
    cdef char* done = <char*> malloc(n + 1)
    if heap == NULL or done == NULL:
        free(heap)
        free(done)
        raise MemoryError()
    try:
        with nogil:
            for i in range(sources.shape[0]):
                _one_source(indptr, indices, weights, sources[i], t_max, dist, heap, done)
                acc = 0.0
                for j in range(target_weights.shape[0]):
                    d = dist[target_offset + j]
                    if d < t_max:
                        acc = acc + target_weights[j] * (1.0 - d / t_max)
                out[i] = acc
    finally:
        free(heap)
        free(done)
