"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise, or
when ``EQUIBUS_PURE_PYTHON=1`` is set, the pure-Python ``_pykernels`` module
is used.  ``BACKEND`` names the active one.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if os.environ.get("EQUIBUS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        pass

BACKENDS = {"python": _pykernels}
if BACKEND == "cython":
    BACKENDS["cython"] = _impl


def get_backend(name: str | None = None):
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable (have {sorted(BACKENDS)})")


def dijkstra(indptr, indices, weights, sources, cutoff=math.inf, *, threads=1, backend=None):
    """One-to-all label-setting shortest paths from each source over a CSR graph.

    Returns an array of shape ``(len(sources), n_nodes)``; entries beyond
    ``cutoff`` are +inf.  With ``threads > 1`` the sources are split into
    contiguous chunks; rows are independent so the result does not depend on
    the thread count.
    """
    impl = get_backend(backend)
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    sources = np.ascontiguousarray(sources, dtype=np.int64)
    out = np.empty((len(sources), len(indptr) - 1), dtype=np.float64)
    if threads <= 1 or len(sources) < 2:
        impl.dijkstra_rows(indptr, indices, weights, sources, float(cutoff), out)
        return out
    bounds = np.linspace(0, len(sources), min(threads, len(sources)) + 1).astype(int)

    def run(a, b):
        impl.dijkstra_rows(indptr, indices, weights, sources[a:b], float(cutoff), out[a:b])

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, bounds[:-1], bounds[1:]))
    return out


def accessibility(indptr, indices, weights, sources, target_offset, target_weights, t_max, *,
                  threads=1, backend=None):
    """Per-source sum of ``w * max(0, 1 - d/t_max)`` over the contiguous target
    nodes starting at ``target_offset``."""
    impl = get_backend(backend)
    indptr = np.ascontiguousarray(indptr, dtype=np.int64)
    indices = np.ascontiguousarray(indices, dtype=np.int64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    sources = np.ascontiguousarray(sources, dtype=np.int64)
    target_weights = np.ascontiguousarray(target_weights, dtype=np.float64)
    out = np.empty(len(sources), dtype=np.float64)

    def run(a, b):
        impl.accessibility_rows(indptr, indices, weights, sources[a:b], int(target_offset),
                                target_weights, float(t_max), out[a:b])

    if threads <= 1 or len(sources) < 2:
        run(0, len(sources))
        return out
    bounds = np.linspace(0, len(sources), min(threads, len(sources)) + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run, bounds[:-1], bounds[1:]))
    return out


def nn_order(dist, *, backend=None):
    """Best-of-all-starts nearest-neighbour open path; returns ``(order, length)``."""
    impl = get_backend(backend)
    return impl.nn_order(np.ascontiguousarray(dist, dtype=np.float64))
