"""Deterministic line-design MDP: partitions of candidate stops into k lines.

States are :class:`LineAssignment` partitions, actions move one stop to a
different line, rewards are differences of bottom-quantile accessibility
between the realised successor and current graphs.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .accessibility import all_centroid_accessibility, quantile_accessibility
from .errors import InadmissibleActionError, InvalidAssignmentError
from .territory import Point, Scenario
from .transit_graph import BusLine, RouterGraph, build_router_graph, make_bus_line


@dataclass(frozen=True)
class LineAssignment:
    """Total map from candidate stop id to line index in ``1..k``.

    ``stop_ids`` is sorted ascending and ``labels[i]`` is the line of
    ``stop_ids[i]``.  Every line holds at least one stop.
    """

    stop_ids: tuple[int, ...]
    labels: tuple[int, ...]
    k: int

    def __post_init__(self):
        object.__setattr__(self, "stop_ids", tuple(int(b) for b in self.stop_ids))
        object.__setattr__(self, "labels", tuple(int(x) for x in self.labels))
        if len(self.stop_ids) != len(self.labels):
            raise InvalidAssignmentError("stop_ids and labels differ in length")
        if list(self.stop_ids) != sorted(set(self.stop_ids)):
            raise InvalidAssignmentError("stop ids must be unique and ascending")
        if self.k < 1:
            raise InvalidAssignmentError("k must be >= 1")
        if any(not 1 <= x <= self.k for x in self.labels):
            raise InvalidAssignmentError(f"line labels must lie in 1..{self.k}")
        empty = set(range(1, self.k + 1)) - set(self.labels)
        if empty:
            raise InvalidAssignmentError(f"line(s) {sorted(empty)} would be empty")

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int], k: int) -> "LineAssignment":
        ids = sorted(mapping)
        return cls(tuple(ids), tuple(mapping[b] for b in ids), k)

    @classmethod
    def from_lines(cls, lines: Sequence[Iterable[int]]) -> "LineAssignment":
        """Build from a sequence of stop sets; line ``i`` gets label ``i+1``."""
        mapping = {}
        for i, line in enumerate(lines):
            for b in line:
                if b in mapping:
                    raise InvalidAssignmentError(f"stop {b} assigned to two lines")
                mapping[b] = i + 1
        return cls.from_mapping(mapping, len(lines))

    @property
    def assignment(self) -> dict[int, int]:
        return dict(zip(self.stop_ids, self.labels))

    def line_of(self, stop: int) -> int:
        return self.labels[self.stop_ids.index(stop)]

    def lines(self) -> tuple[tuple[int, ...], ...]:
        """Stop ids of each line (ascending), indexed ``line - 1``."""
        out = [[] for _ in range(self.k)]
        for b, x in zip(self.stop_ids, self.labels):
            out[x - 1].append(b)
        return tuple(tuple(ln) for ln in out)

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(ln) for ln in self.lines())


@dataclass(frozen=True, order=True)
class Action:
    stop: int
    target_line: int


def _check_fits(s: Scenario, st: LineAssignment) -> None:
    if st.stop_ids != s.candidate_ids:
        raise InvalidAssignmentError("assignment does not cover exactly the candidate stops")
    if st.k != s.num_lines:
        raise InvalidAssignmentError(f"assignment has {st.k} lines, scenario expects {s.num_lines}")


# --------------------------------------------------------------------------- #
# line ordering

def sort_line(stops: Iterable[int], locations: Mapping[int, Point]) -> list[int]:
    """Visiting order of a line's stops: nearest-neighbour from every possible
    start, keeping the shortest open path (ties to the smaller stop id)."""
    return sort_line_with_length(stops, locations)[0]


def sort_line_with_length(stops: Iterable[int], locations: Mapping[int, Point]):
    ids = sorted(set(stops))
    if not ids:
        raise ValueError("cannot sort an empty line")
    xy = np.array([[locations[b].x, locations[b].y] for b in ids], dtype=float)
    dist = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
    order, length = kernels.nn_order(dist)
    return [ids[i] for i in order], length


def path_length(order: Sequence[int], locations: Mapping[int, Point]) -> float:
    total = 0.0
    for a, b in zip(order, order[1:]):
        pa, pb = locations[a], locations[b]
        total += math.hypot(pa.x - pb.x, pa.y - pb.y)
    return total


# --------------------------------------------------------------------------- #
# transitions

def enumerate_actions(st: LineAssignment) -> list[Action]:
    """All admissible moves, ordered by stop id then target line."""
    sizes = st.sizes()
    out = []
    for b, line in zip(st.stop_ids, st.labels):
        if sizes[line - 1] == 1:
            continue
        out.extend(Action(b, t) for t in range(1, st.k + 1) if t != line)
    return out


def apply_action(st: LineAssignment, a: Action) -> LineAssignment:
    try:
        i = st.stop_ids.index(a.stop)
    except ValueError:
        raise InadmissibleActionError(f"stop {a.stop} is not in the assignment") from None
    current = st.labels[i]
    if a.target_line == current:
        raise InadmissibleActionError(f"stop {a.stop} is already on line {current}")
    if not 1 <= a.target_line <= st.k:
        raise InadmissibleActionError(f"target line {a.target_line} outside 1..{st.k}")
    if st.labels.count(current) == 1:
        raise InadmissibleActionError(f"moving stop {a.stop} would empty line {current}")
    labels = list(st.labels)
    labels[i] = a.target_line
    return LineAssignment(st.stop_ids, tuple(labels), st.k)


def _surjections(r: int, e: int, k: int) -> int:
    """Ways to assign ``r`` stops to ``k`` lines so that ``e`` given lines are hit."""
    return sum((-1) ** j * math.comb(e, j) * (k - j) ** r for j in range(e + 1))


def random_state(s: Scenario, seed=None, *, k: int | None = None) -> LineAssignment:
    """Uniform random partition of the candidate stops conditioned on no empty line.

    Sampled exactly, stop by stop, weighting each choice by the number of
    surjective completions.  ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = s.num_lines if k is None else k
    ids = s.candidate_ids
    n = len(ids)
    if n < k:
        raise InvalidAssignmentError(f"{n} stops cannot fill {k} lines")
    labels = []
    used: set[int] = set()
    for i in range(n):
        remaining = n - i - 1
        e = k - len(used)
        total = _surjections(remaining + 1, e, k)
        to_empty = e * _surjections(remaining, e - 1, k) if e else 0
        if rng.random() < to_empty / total:
            choices = [x for x in range(1, k + 1) if x not in used]
        else:
            choices = sorted(used)
        line = choices[int(rng.integers(len(choices)))]
        used.add(line)
        labels.append(line)
    return LineAssignment(ids, tuple(labels), k)


def all_states(s: Scenario) -> list[LineAssignment]:
    """Every valid labelled assignment (small instances only)."""
    out = []
    n, k = s.n_candidates, s.num_lines
    for code in range(k ** n):
        labels = []
        for _ in range(n):
            code, r = divmod(code, k)
            labels.append(r + 1)
        if len(set(labels)) == k:
            out.append(LineAssignment(s.candidate_ids, tuple(labels), k))
    return out


# --------------------------------------------------------------------------- #
# realisation and evaluation

class StateEvaluator:
    """Realises states and computes ``acc^q`` with memoisation.

    Line orders are cached per stop set and per-centroid accessibility per
    assignment (keyed by its label tuple), so revisiting states is free.
    ``evaluations`` counts actual accessibility computations.
    """

    def __init__(self, s: Scenario, q: float = 20, *, threads: int = 1,
                 cache_size: int = 4096, max_walk_km: float | None = None,
                 terminal_time: float = 0.0):
        self.scenario = s
        self.q = q
        self.threads = threads
        self.max_walk_km = max_walk_km
        self.terminal_time = terminal_time
        self.cache_size = cache_size
        self.evaluations = 0
        self._orders: OrderedDict = OrderedDict()
        self._values: OrderedDict = OrderedDict()
        self._lines: OrderedDict = OrderedDict()
        self._locations = {b: s.stop_by_id[b].location for b in s.candidate_ids}

    def _lru(self, cache, key, make):
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        value = make()
        cache[key] = value
        if len(cache) > self.cache_size:
            cache.popitem(last=False)
        return value

    def line_order(self, stops: Iterable[int]) -> tuple[int, ...]:
        key = frozenset(stops)
        return self._lru(self._orders, key,
                         lambda: tuple(sort_line(key, self._locations)))

    def bus_lines(self, st: LineAssignment) -> list[BusLine]:
        def make():
            _check_fits(self.scenario, st)
            return [make_bus_line(self.scenario, i + 1, self.line_order(ln), self.terminal_time)
                    for i, ln in enumerate(st.lines())]

        return list(self._lru(self._lines, st.labels, make))

    def realize(self, st: LineAssignment) -> tuple[list[BusLine], RouterGraph]:
        lines = self.bus_lines(st)
        return lines, build_router_graph(self.scenario, lines, max_walk_km=self.max_walk_km)

    def per_centroid(self, st: LineAssignment) -> dict[int, float]:
        def compute():
            self.evaluations += 1
            _, g = self.realize(st)
            values = all_centroid_accessibility(g, self.scenario, threads=self.threads)
            return {c.id: float(v) for c, v in zip(self.scenario.centroids, values)}

        return self._lru(self._values, st.labels, compute)

    def value(self, st: LineAssignment, q: float | None = None) -> float:
        return quantile_accessibility(self.per_centroid(st), self.q if q is None else q)


def realize_state(s: Scenario, st: LineAssignment, *, evaluator: StateEvaluator | None = None):
    """Sort every line, compute lengths and headways, build the router graph."""
    ev = evaluator or StateEvaluator(s)
    return ev.realize(st)


def reward(s: Scenario, st: LineAssignment, a: Action, q: float, *,
           evaluator: StateEvaluator | None = None) -> float:
    ev = evaluator or StateEvaluator(s, q)
    nxt = apply_action(st, a)
    return ev.value(nxt, q) - ev.value(st, q)
