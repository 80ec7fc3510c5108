"""Travel times, per-centroid accessibility and bottom-quantile aggregates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .territory import Poi, Scenario
from .transit_graph import RouterGraph

DEFAULT_QUANTILES = (20, 50, 100)


def shortest_travel_times(g: RouterGraph, origin: int, *, backend=None) -> dict[int, float]:
    """Minimum door-to-door minutes from centroid ``origin`` to every PoI."""
    indptr, indices, weights = g.csr
    dist = kernels.dijkstra(indptr, indices, weights, [g.centroid_node(origin)],
                            backend=backend)[0]
    return {pid: float(dist[g.poi_offset + i]) for i, pid in enumerate(g.poi_ids)}


def centroid_accessibility(times: Mapping[int, float], pois: Sequence[Poi], t_max: float) -> float:
    """Sum over PoIs of ``weight * max(0, 1 - T/T_max)``."""
    acc = 0.0
    for p in pois:
        t = times[p.id]
        if t < t_max:
            acc = acc + p.weight * (1.0 - t / t_max)
    return acc


def all_centroid_accessibility(g: RouterGraph, s: Scenario, *, threads: int = 1,
                               backend=None) -> np.ndarray:
    """Accessibility of every centroid, in scenario centroid order.

    Shortest paths are pruned at ``T_max`` since PoIs beyond it contribute 0.
    Terms are summed in PoI order, matching :func:`centroid_accessibility`.
    """
    indptr, indices, weights = g.csr
    return kernels.accessibility(indptr, indices, weights, np.arange(g.n_centroids),
                                 g.poi_offset, [p.weight for p in s.pois], s.t_max,
                                 threads=threads, backend=backend)


def worst_count(n: int, q: float) -> int:
    """Size of the worst-q% set: ``ceil(q/100 * n)`` computed exactly."""
    if not 0 < q <= 100:
        raise ValueError(f"quantile q must be in (0, 100], got {q}")
    return math.ceil(Fraction(str(q)) * n / 100)


def worst_set(per_centroid: Mapping[int, float], q: float) -> list[int]:
    """Ids of the ``ceil(q% * |C|)`` least accessible centroids; ties by id."""
    ranked = sorted(per_centroid.items(), key=lambda kv: (kv[1], kv[0]))
    return [cid for cid, _ in ranked[:worst_count(len(ranked), q)]]


def quantile_accessibility(per_centroid: Mapping[int, float], q: float) -> float:
    if not per_centroid:
        raise ValueError("per_centroid must be non-empty")
    return math.fsum(per_centroid[c] for c in worst_set(per_centroid, q))


def global_accessibility(per_centroid: Mapping[int, float]) -> float:
    return math.fsum(per_centroid.values())


@dataclass(frozen=True)
class AccessibilityReport:
    per_centroid: dict[int, float]
    acc_q: dict[float, float] = field(default_factory=dict)
    worst_sets: dict[float, list[int]] = field(default_factory=dict)

    @classmethod
    def from_values(cls, per_centroid: Mapping[int, float],
                    quantiles: Iterable[float] = DEFAULT_QUANTILES) -> "AccessibilityReport":
        per_centroid = dict(per_centroid)
        acc_q, sets = {}, {}
        for q in quantiles:
            sets[q] = worst_set(per_centroid, q)
            acc_q[q] = math.fsum(per_centroid[c] for c in sets[q])
        return cls(per_centroid, acc_q, sets)

    @property
    def total(self) -> float:
        return global_accessibility(self.per_centroid)


def accessibility_report(g: RouterGraph, s: Scenario,
                         quantiles: Iterable[float] = DEFAULT_QUANTILES, *,
                         threads: int = 1, backend=None) -> AccessibilityReport:
    values = all_centroid_accessibility(g, s, threads=threads, backend=backend)
    return AccessibilityReport.from_values(
        {c.id: float(v) for c, v in zip(s.centroids, values)}, quantiles)
