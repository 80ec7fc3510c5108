"""Multi-modal router graph for a scenario plus a set of bus lines.

Node layout (contiguous integer ids)::

    [centroids | pois | physical stops | metro line-nodes | bus line-nodes]

A line-node is one (stop, line) pair.  Waiting is charged on the boarding
edge (stop -> line-node, half the headway); alighting is free; riding edges
join consecutive line-nodes in both directions.  Walking edges go from each
centroid to every stop and every PoI, and from every stop to every PoI.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InvalidAssignmentError
from .territory import BUS_CANDIDATE, Scenario

WALK, BOARD, RIDE, ALIGHT = 0, 1, 2, 3
EDGE_KINDS = {WALK: "walk", BOARD: "board", RIDE: "ride", ALIGHT: "alight"}


def compute_headway(d_l: float, s_b: float, n_l: int) -> float:
    """Headway in minutes of a line of length ``d_l`` km served by ``n_l``
    buses at ``s_b`` km/h."""
    return 60.0 * d_l / (s_b * n_l)


@dataclass(frozen=True)
class BusLine:
    id: int
    ordered_stops: tuple[int, ...]
    length: float
    headway: float

    def __post_init__(self):
        if not self.ordered_stops:
            raise InvalidAssignmentError(f"bus line {self.id} has no stops")
        if len(set(self.ordered_stops)) != len(self.ordered_stops):
            raise InvalidAssignmentError(f"bus line {self.id} repeats a stop")


def make_bus_line(s: Scenario, line_id: int, ordered_stops: Sequence[int],
                  terminal_time: float = 0.0) -> BusLine:
    """BusLine with its length and headway computed from stop geometry."""
    ordered_stops = tuple(int(b) for b in ordered_stops)
    locs = [s.stop_by_id[b].location for b in ordered_stops]
    length = 0.0
    for a, b in zip(locs, locs[1:]):
        length += math.hypot(a.x - b.x, a.y - b.y)
    headway = compute_headway(length, s.bus_speed, s.fleet_per_line)
    if len(ordered_stops) >= 2:
        headway += terminal_time
    return BusLine(line_id, ordered_stops, length, headway)


@dataclass(frozen=True, eq=False)
class RouterGraph:
    """Immutable directed graph with edge weights in minutes."""

    n_nodes: int
    centroid_ids: tuple[int, ...]
    poi_ids: tuple[int, ...]
    stop_ids: tuple[int, ...]
    line_nodes: tuple[tuple[str, int, int], ...]  # (mode, line id, stop id) per line-node
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    kind: np.ndarray

    @property
    def n_centroids(self) -> int:
        return len(self.centroid_ids)

    @property
    def poi_offset(self) -> int:
        return len(self.centroid_ids)

    @property
    def stop_offset(self) -> int:
        return len(self.centroid_ids) + len(self.poi_ids)

    @property
    def line_offset(self) -> int:
        return self.stop_offset + len(self.stop_ids)

    def centroid_node(self, cid: int) -> int:
        return self._centroid_index[cid]

    def poi_nodes(self) -> np.ndarray:
        return np.arange(self.poi_offset, self.stop_offset)

    def stop_node(self, sid: int) -> int:
        return self.stop_offset + self._stop_index[sid]

    def line_node(self, mode: str, line_id: int, stop_id: int) -> int:
        return self.line_offset + self._line_index[(mode, line_id, stop_id)]

    @cached_property
    def _centroid_index(self):
        return {c: i for i, c in enumerate(self.centroid_ids)}

    @cached_property
    def _stop_index(self):
        return {s: i for i, s in enumerate(self.stop_ids)}

    @cached_property
    def _line_index(self):
        return {key: i for i, key in enumerate(self.line_nodes)}

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(indptr, indices, weights)`` with out-edges grouped by source."""
        order = np.argsort(self.src, kind="stable")
        indptr = np.searchsorted(self.src[order], np.arange(self.n_nodes + 1)).astype(np.int64)
        return indptr, self.dst[order].astype(np.int64), self.weight[order].astype(np.float64)

    def edges(self, kind: int | None = None):
        """Iterate ``(src, dst, weight, kind)`` tuples, optionally of one kind."""
        for u, v, w, k in zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist(),
                              self.kind.tolist()):
            if kind is None or k == kind:
                yield u, v, w, k


class _Static:
    """Scenario-dependent part of every router graph: walking edges and metro."""

    def __init__(self, s: Scenario, max_walk_km: float | None):
        self.centroid_ids = tuple(c.id for c in s.centroids)
        self.poi_ids = tuple(p.id for p in s.pois)
        self.stop_ids = tuple(st.id for st in s.stops)
        nc, npoi, ns = len(s.centroids), len(s.pois), len(s.stops)
        c_xy = np.array([[c.location.x, c.location.y] for c in s.centroids]).reshape(-1, 2)
        p_xy = np.array([[p.location.x, p.location.y] for p in s.pois]).reshape(-1, 2)
        s_xy = np.array([[st.location.x, st.location.y] for st in s.stops]).reshape(-1, 2)
        self.stop_xy = s_xy
        c_nodes = np.arange(nc)
        p_nodes = nc + np.arange(npoi)
        s_nodes = nc + npoi + np.arange(ns)

        parts = []  # (src, dst, km) blocks grouped by source node
        for i in range(nc):
            d_cs = np.hypot(*(s_xy - c_xy[i]).T) if ns else np.empty(0)
            d_cp = np.hypot(*(p_xy - c_xy[i]).T) if npoi else np.empty(0)
            parts.append((np.full(ns, c_nodes[i]), s_nodes, d_cs))
            parts.append((np.full(npoi, c_nodes[i]), p_nodes, d_cp))
        for j in range(ns):
            d_sp = np.hypot(*(p_xy - s_xy[j]).T) if npoi else np.empty(0)
            parts.append((np.full(npoi, s_nodes[j]), p_nodes, d_sp))
        src = np.concatenate([p[0] for p in parts]) if parts else np.empty(0, np.int64)
        dst = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, np.int64)
        km = np.concatenate([p[2] for p in parts]) if parts else np.empty(0)
        if max_walk_km is not None:
            keep = km <= max_walk_km
            src, dst, km = src[keep], dst[keep], km[keep]
        walk_w = 60.0 * km / s.walk_speed

        stop_pos = {sid: i for i, sid in enumerate(self.stop_ids)}
        base = nc + npoi + ns
        line_nodes = []
        e_src, e_dst, e_w, e_k = [src], [dst], [walk_w], [np.full(len(src), WALK)]
        for line in s.metro_lines:
            first = base + len(line_nodes)
            line_nodes.extend(("metro", line.id, sid) for sid in line.stops)
            _line_edges(e_src, e_dst, e_w, e_k, first,
                        [nc + npoi + stop_pos[sid] for sid in line.stops],
                        [s_xy[stop_pos[sid]] for sid in line.stops],
                        line.headway, s.metro_speed)
        self.line_nodes = tuple(line_nodes)
        self.n_nodes = base + len(line_nodes)
        self.src = np.concatenate(e_src).astype(np.int64)
        self.dst = np.concatenate(e_dst).astype(np.int64)
        self.weight = np.concatenate(e_w).astype(np.float64)
        self.kind = np.concatenate(e_k).astype(np.int8)
        self.stop_pos = stop_pos
        self.stop_base = nc + npoi


def _line_edges(e_src, e_dst, e_w, e_k, first, stop_nodes, xy, headway, speed):
    n = len(stop_nodes)
    if n < 2:
        return
    ln = np.arange(first, first + n)
    sn = np.asarray(stop_nodes)
    xy = np.asarray(xy, dtype=float)
    ride = 60.0 * np.hypot(*(xy[1:] - xy[:-1]).T) / speed
    e_src += [sn, ln, ln[:-1], ln[1:]]
    e_dst += [ln, sn, ln[1:], ln[:-1]]
    e_w += [np.full(n, headway / 2.0), np.zeros(n), ride, ride]
    e_k += [np.full(n, BOARD), np.full(n, ALIGHT), np.full(n - 1, RIDE), np.full(n - 1, RIDE)]


def _static(s: Scenario, max_walk_km: float | None) -> _Static:
    # memoised on the (immutable) scenario instance
    cache = s.__dict__.setdefault("_router_static", {})
    if max_walk_km not in cache:
        cache[max_walk_km] = _Static(s, max_walk_km)
    return cache[max_walk_km]


def build_router_graph(s: Scenario, lines: Sequence[BusLine], *,
                       max_walk_km: float | None = None) -> RouterGraph:
    """Router graph of the metro skeleton plus ``lines``.

    Each candidate stop may belong to at most one bus line.  ``max_walk_km``
    drops walking edges longer than the radius (off by default).
    """
    st = _static(s, max_walk_km)
    seen: dict[int, int] = {}
    ids = set()
    for line in lines:
        if line.id in ids:
            raise InvalidAssignmentError(f"duplicate bus line id {line.id}")
        ids.add(line.id)
        for b in line.ordered_stops:
            stop = s.stop_by_id.get(b)
            if stop is None or stop.kind != BUS_CANDIDATE:
                raise InvalidAssignmentError(f"stop {b} on line {line.id} is not a candidate stop")
            if b in seen:
                raise InvalidAssignmentError(
                    f"stop {b} appears in bus lines {seen[b]} and {line.id}")
            seen[b] = line.id

    line_nodes = list(st.line_nodes)
    e_src, e_dst, e_w, e_k = [st.src], [st.dst], [st.weight], [st.kind]
    for line in lines:
        first = st.n_nodes + len(line_nodes) - len(st.line_nodes)
        line_nodes.extend(("bus", line.id, b) for b in line.ordered_stops)
        pos = [st.stop_pos[b] for b in line.ordered_stops]
        _line_edges(e_src, e_dst, e_w, e_k, first, [st.stop_base + p for p in pos],
                    st.stop_xy[pos], line.headway, s.bus_speed)

    def freeze(parts, dtype):
        a = np.concatenate(parts).astype(dtype) if len(parts) > 1 else parts[0]
        a.flags.writeable = False
        return a

    return RouterGraph(
        n_nodes=st.n_nodes + len(line_nodes) - len(st.line_nodes),
        centroid_ids=st.centroid_ids,
        poi_ids=st.poi_ids,
        stop_ids=st.stop_ids,
        line_nodes=tuple(line_nodes),
        src=freeze(e_src, np.int64),
        dst=freeze(e_dst, np.int64),
        weight=freeze(e_w, np.float64),
        kind=freeze(e_k, np.int8),
    )
