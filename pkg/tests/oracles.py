"""Independent reference computations used by the test-suite.

None of these touch the router graph or the kernels: they work from scenario
geometry directly.
"""

import itertools
import math

import mpmath
import numpy as np

from equibus.territory import (BUS_CANDIDATE, METRO, Centroid, MetroLine, Point, Poi,
                               Scenario, Stop)


def _km(a, b):
    return math.hypot(a.x - b.x, a.y - b.y)


def _services(s, bus_lines):
    """(headway, speed, ordered stop ids) for every metro and bus line with >= 2 stops."""
    out = [(m.headway, s.metro_speed, list(m.stops)) for m in s.metro_lines]
    out += [(b.headway, s.bus_speed, list(b.ordered_stops))
            for b in bus_lines if len(b.ordered_stops) >= 2]
    return out


def brute_force_times(s, bus_lines):
    """T[c][poi] by enumerating itineraries.

    An itinerary is: walk centroid -> poi; or walk centroid -> stop, then a
    sequence of ride legs (board a line at the current stop, paying half its
    headway, ride to another stop of that line), then walk stop -> poi.
    Physical stops are never revisited, and consecutive legs use different
    lines (alighting and re-boarding the same line is never shorter).
    """
    loc = {st.id: st.location for st in s.stops}
    services = _services(s, bus_lines)
    # ride time along a line between two of its stops
    legs = {}  # stop -> list of (line index, dest stop, cost)
    for li, (headway, speed, seq) in enumerate(services):
        cum = [0.0]
        for a, b in zip(seq, seq[1:]):
            cum.append(cum[-1] + 60.0 * _km(loc[a], loc[b]) / speed)
        for i, a in enumerate(seq):
            for j, b in enumerate(seq):
                if i != j:
                    ride = cum[max(i, j)] - cum[min(i, j)]
                    legs.setdefault(a, []).append((li, b, headway / 2.0 + ride))

    # best arrival time at each stop for each starting stop, by DFS over simple itineraries
    def reach_from(start):
        best = {start: 0.0}

        def dfs(stop, last_line, visited, t):
            for li, dest, cost in legs.get(stop, ()):
                if li == last_line or dest in visited:
                    continue
                nt = t + cost
                if nt < best.get(dest, math.inf):
                    best[dest] = nt
                visited.add(dest)
                dfs(dest, li, visited, nt)
                visited.remove(dest)

        dfs(start, None, {start}, 0.0)
        return best

    reach = {st.id: reach_from(st.id) for st in s.stops}
    out = {}
    for c in s.centroids:
        row = {}
        for p in s.pois:
            t = 60.0 * _km(c.location, p.location) / s.walk_speed
            for s0 in s.stops:
                t0 = 60.0 * _km(c.location, s0.location) / s.walk_speed
                for s1, tr in reach[s0.id].items():
                    t = min(t, t0 + tr + 60.0 * _km(loc[s1], p.location) / s.walk_speed)
            row[p.id] = t
        out[c.id] = row
    return out


def brute_force_accessibility(s, bus_lines):
    times = brute_force_times(s, bus_lines)
    return {c: math.fsum(p.weight * max(0.0, 1.0 - times[c][p.id] / s.t_max) for p in s.pois)
            for c in times}


def brute_force_acc_q(s, bus_lines, q):
    acc = brute_force_accessibility(s, bus_lines)
    ranked = sorted(acc.items(), key=lambda kv: (kv[1], kv[0]))
    count = math.ceil(q * len(ranked) / 100 - 1e-12)
    return math.fsum(v for _, v in ranked[:count])


def shortest_hamiltonian_path(points):
    """Exact shortest open path through all points by permutation enumeration."""
    best = math.inf
    idx = range(len(points))
    for perm in itertools.permutations(idx):
        if len(perm) > 1 and perm[0] > perm[-1]:
            continue
        length = sum(_km(points[a], points[b]) for a, b in zip(perm, perm[1:]))
        best = min(best, length)
    return best


def t_cdf_by_quadrature(t, df):
    """Student-t CDF by numerically integrating its density (50 digits)."""
    with mpmath.workdps(50):
        nu = mpmath.mpf(df)
        c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
        pdf = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
        tail = mpmath.quad(pdf, [abs(mpmath.mpf(t)), mpmath.inf])
        return float(1 - tail) if t >= 0 else float(tail)


def random_small_scenario(rng, *, max_centroids=9, max_stops=10, max_pois=5,
                          extent=6.0, num_lines=1):
    """Tiny random territory with up to 2 metro lines sharing stations."""
    def pt():
        return Point(float(rng.uniform(0, extent)), float(rng.uniform(0, extent)))

    n_c = int(rng.integers(1, max_centroids + 1))
    n_p = int(rng.integers(1, max_pois + 1))
    n_metro = int(rng.integers(0, 5)) if max_stops >= 6 else 0
    n_bus = int(rng.integers(max(num_lines, 2), max_stops - n_metro + 1))
    centroids = [Centroid(i, pt()) for i in range(n_c)]
    pois = [Poi(i, pt(), float(rng.choice([0.5, 1.0, 2.0]))) for i in range(n_p)]
    stops = [Stop(i, pt(), BUS_CANDIDATE) for i in range(n_bus)]
    stops += [Stop(n_bus + j, pt(), METRO) for j in range(n_metro)]
    metro_lines = []
    metro_ids = [n_bus + j for j in range(n_metro)]
    if n_metro >= 2:
        for li in range(int(rng.integers(1, 3))):
            size = int(rng.integers(2, n_metro + 1))
            ids = [int(x) for x in rng.choice(metro_ids, size=size, replace=False)]
            metro_lines.append(MetroLine(li, tuple(ids), float(rng.uniform(2, 10))))
    return Scenario(tuple(centroids), tuple(pois), tuple(stops), tuple(metro_lines),
                    walk_speed=4.5, bus_speed=28.0, fleet_per_line=int(rng.integers(1, 11)),
                    t_max=float(rng.uniform(20, 90)), num_lines=num_lines,
                    metro_speed=float(rng.uniform(25, 45)))


def random_bus_lines(s, rng, max_lines=2):
    """Up to ``max_lines`` bus lines over a random subset of candidates, random order."""
    from equibus.transit_graph import make_bus_line

    ids = [b for b in s.candidate_ids]
    rng.shuffle(ids)
    n_lines = int(rng.integers(0, max_lines + 1))
    used = ids[:int(rng.integers(n_lines, len(ids) + 1))] if n_lines else []
    cuts = sorted(rng.choice(np.arange(1, len(used)), size=n_lines - 1, replace=False)) \
        if n_lines > 1 and len(used) > 1 else []
    bounds = [0, *cuts, len(used)]
    lines = []
    for i, (a, b) in enumerate(zip(bounds, bounds[1:])):
        if b > a:
            lines.append(make_bus_line(s, i + 1, used[a:b]))
    return lines


def conditioned_line_size_law(n, k):
    """Exact law of line-1 size for uniform surjective assignments of n stops to k lines."""
    counts = {}
    total = 0
    for labels in itertools.product(range(k), repeat=n):
        if len(set(labels)) == k:
            size = labels.count(0)
            counts[size] = counts.get(size, 0) + 1
            total += 1
    return {size: c / total for size, c in counts.items()}
