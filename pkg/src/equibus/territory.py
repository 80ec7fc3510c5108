"""Study area: centroid grid, points of interest, metro skeleton, candidate stops.

Coordinates are planar kilometres, speeds km/h, times minutes.  Scenarios are
immutable and persisted as a single JSON document (see ``docs/formats.md``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ScenarioError

METRO = "metro"
BUS_CANDIDATE = "bus-candidate"
STOP_KINDS = (METRO, BUS_CANDIDATE)

DEFAULT_METRO_HEADWAY_MIN = 5.0
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ScenarioError(f"non-finite coordinates ({self.x}, {self.y})", "location")


@dataclass(frozen=True)
class Centroid:
    id: int
    location: Point


@dataclass(frozen=True)
class Poi:
    id: int
    location: Point
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight >= 0:
            raise ScenarioError(f"poi {self.id} has negative weight {self.weight}", "weight")


@dataclass(frozen=True)
class Stop:
    id: int
    location: Point
    kind: str

    def __post_init__(self):
        if self.kind not in STOP_KINDS:
            raise ScenarioError(f"stop {self.id} has unknown kind {self.kind!r}", "kind")


@dataclass(frozen=True)
class MetroLine:
    id: int
    stops: tuple[int, ...]
    headway: float = DEFAULT_METRO_HEADWAY_MIN

    def __post_init__(self):
        object.__setattr__(self, "stops", tuple(int(s) for s in self.stops))
        if len(self.stops) < 2:
            raise ScenarioError(f"metro line {self.id} needs at least 2 stops", "stops")
        if not self.headway > 0:
            raise ScenarioError(f"metro line {self.id} headway must be > 0", "headway_min")


def euclidean_minutes(a: Point, b: Point, speed: float) -> float:
    """Straight-line travel time in minutes at ``speed`` km/h."""
    return 60.0 * math.hypot(a.x - b.x, a.y - b.y) / speed


@dataclass(frozen=True)
class Scenario:
    centroids: tuple[Centroid, ...]
    pois: tuple[Poi, ...]
    stops: tuple[Stop, ...]
    metro_lines: tuple[MetroLine, ...]
    walk_speed: float = 4.5
    bus_speed: float = 28.0
    fleet_per_line: int = 10
    t_max: float = 30.0
    num_lines: int = 3
    centroid_spacing: float = 1.0
    rng_seed: int = 0
    metro_speed: float = 35.0

    def __post_init__(self):
        for name in ("centroids", "pois", "stops", "metro_lines"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if not self.walk_speed > 0:
            raise ScenarioError("walk_speed must be > 0", "walk_speed_kmh")
        if not self.bus_speed > 0:
            raise ScenarioError("bus_speed must be > 0", "bus_speed_kmh")
        if not self.metro_speed > 0:
            raise ScenarioError("metro_speed must be > 0", "metro_speed_kmh")
        if int(self.fleet_per_line) != self.fleet_per_line or self.fleet_per_line < 1:
            raise ScenarioError("fleet_per_line must be a positive integer", "fleet_per_line")
        if not self.t_max > 0:
            raise ScenarioError("t_max must be > 0", "t_max_min")
        if int(self.num_lines) != self.num_lines or self.num_lines < 1:
            raise ScenarioError("num_lines must be a positive integer", "num_lines")
        if not self.centroid_spacing > 0:
            raise ScenarioError("centroid_spacing must be > 0", "centroid_spacing_km")
        if not self.centroids:
            raise ScenarioError("scenario has no centroids", "centroids")
        _check_unique((c.id for c in self.centroids), "centroid", "centroids")
        _check_unique((p.id for p in self.pois), "poi", "pois")
        _check_unique((s.id for s in self.stops), "stop", "stops")
        _check_unique((m.id for m in self.metro_lines), "metro line", "metro_lines")
        kinds = {s.id: s.kind for s in self.stops}
        for line in self.metro_lines:
            for sid in line.stops:
                if kinds.get(sid) != METRO:
                    raise ScenarioError(
                        f"metro line {line.id} references stop {sid} which is not a metro stop",
                        "metro_lines",
                    )
        if self.num_lines > self.n_candidates:
            raise ScenarioError(
                f"num_lines={self.num_lines} exceeds the {self.n_candidates} candidate stops",
                "num_lines",
            )

    @property
    def n_candidates(self) -> int:
        return sum(1 for s in self.stops if s.kind == BUS_CANDIDATE)

    @cached_property
    def candidate_ids(self) -> tuple[int, ...]:
        """Candidate bus stop ids in ascending order; the canonical stop indexing."""
        return tuple(sorted(s.id for s in self.stops if s.kind == BUS_CANDIDATE))

    @cached_property
    def stop_by_id(self) -> dict[int, Stop]:
        return {s.id: s for s in self.stops}

    @cached_property
    def candidate_xy(self) -> np.ndarray:
        xy = np.array([[self.stop_by_id[i].location.x, self.stop_by_id[i].location.y]
                       for i in self.candidate_ids], dtype=float).reshape(-1, 2)
        xy.flags.writeable = False
        return xy

    @cached_property
    def candidate_distances(self) -> np.ndarray:
        """Pairwise Euclidean km between candidate stops (canonical order)."""
        xy = self.candidate_xy
        d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=-1))
        d.flags.writeable = False
        return d

    @cached_property
    def extent(self) -> tuple[float, float, float, float]:
        """Bounding box ``(xmin, ymin, xmax, ymax)`` over every located object."""
        pts = [c.location for c in self.centroids] + [p.location for p in self.pois] + \
              [s.location for s in self.stops]
        xs = [p.x for p in pts]
        ys = [p.y for p in pts]
        return min(xs), min(ys), max(xs), max(ys)

    def params_dict(self) -> dict:
        return {
            "walk_speed_kmh": self.walk_speed,
            "bus_speed_kmh": self.bus_speed,
            "metro_speed_kmh": self.metro_speed,
            "fleet_per_line": self.fleet_per_line,
            "t_max_min": self.t_max,
            "num_lines": self.num_lines,
            "centroid_spacing_km": self.centroid_spacing,
            "rng_seed": self.rng_seed,
        }


def _check_unique(ids, what, field_name):
    seen = set()
    for i in ids:
        if i in seen:
            raise ScenarioError(f"duplicate {what} id {i}", field_name)
        seen.add(i)


# --------------------------------------------------------------------------- #
# generation

def generate_grid_scenario(
    width_cells: int,
    height_cells: int,
    spacing: float,
    metro_spec: Sequence[Sequence[int]],
    poi_density_map: Sequence[float],
    seed: int,
    *,
    metro_headways: Sequence[float] | None = None,
    walk_speed: float = 4.5,
    bus_speed: float = 28.0,
    metro_speed: float = 35.0,
    fleet_per_line: int = 10,
    t_max: float = 30.0,
    num_lines: int | None = None,
) -> Scenario:
    """Build a grid territory with one random candidate stop per cell.

    Cells are numbered row-major from the south-west corner.  Each metro path
    in ``metro_spec`` is a list of cell indices; a station sits at the centre
    of every referenced cell and is shared by all lines through that cell.
    PoI counts per cell are the density value stochastically rounded, so an
    integral density yields exactly that many unit-weight PoIs.  ``num_lines``
    defaults to ``min(3, cells)``.
    """
    if width_cells < 1 or height_cells < 1:
        raise ScenarioError("grid must have at least one cell", "width_cells")
    n_cells = width_cells * height_cells
    if len(poi_density_map) != n_cells:
        raise ScenarioError(
            f"poi_density_map has {len(poi_density_map)} entries, expected {n_cells}",
            "poi_density_map",
        )
    if any(not d >= 0 for d in poi_density_map):
        raise ScenarioError("poi densities must be nonnegative", "poi_density_map")
    if metro_headways is not None and len(metro_headways) != len(metro_spec):
        raise ScenarioError("one headway per metro line required", "metro_headways")

    rng = np.random.default_rng(seed)
    tiny = np.nextafter(0.0, 1.0)

    def cell_origin(i):
        return (i % width_cells) * spacing, (i // width_cells) * spacing

    centroids = []
    stops = []
    for i in range(n_cells):
        x0, y0 = cell_origin(i)
        centroids.append(Centroid(i, Point(x0 + 0.5 * spacing, y0 + 0.5 * spacing)))
        u, v = rng.uniform(tiny, 1.0, size=2)
        stops.append(Stop(i, Point(x0 + u * spacing, y0 + v * spacing), BUS_CANDIDATE))

    pois = []
    for i, density in enumerate(poi_density_map):
        whole = int(math.floor(density))
        count = whole + int(rng.random() < density - whole)
        x0, y0 = cell_origin(i)
        for _ in range(count):
            u, v = rng.uniform(0.0, 1.0, size=2)
            pois.append(Poi(len(pois), Point(x0 + u * spacing, y0 + v * spacing), 1.0))

    station_of_cell = {}
    metro_lines = []
    for li, path in enumerate(metro_spec):
        ids = []
        for cell in path:
            if not (isinstance(cell, (int, np.integer)) and 0 <= cell < n_cells):
                raise ScenarioError(
                    f"metro line {li} references cell {cell!r} outside the {n_cells}-cell grid",
                    "metro_spec",
                )
            if cell not in station_of_cell:
                sid = n_cells + len(station_of_cell)
                station_of_cell[cell] = sid
                stops.append(Stop(sid, centroids[cell].location, METRO))
            ids.append(station_of_cell[cell])
        headway = DEFAULT_METRO_HEADWAY_MIN if metro_headways is None else metro_headways[li]
        metro_lines.append(MetroLine(li, tuple(ids), headway))

    if num_lines is None:
        num_lines = min(3, n_cells)
    return Scenario(
        centroids=tuple(centroids),
        pois=tuple(pois),
        stops=tuple(stops),
        metro_lines=tuple(metro_lines),
        walk_speed=walk_speed,
        bus_speed=bus_speed,
        fleet_per_line=fleet_per_line,
        t_max=t_max,
        num_lines=num_lines,
        centroid_spacing=spacing,
        rng_seed=seed,
        metro_speed=metro_speed,
    )


def city_density(width_cells: int, height_cells: int, peak: float = 4.0,
                 base: float = 0.25) -> list[float]:
    """Monocentric PoI density: a Gaussian bump over the grid centre."""
    cx, cy = (width_cells - 1) / 2.0, (height_cells - 1) / 2.0
    sigma = max(width_cells, height_cells) / 5.0
    out = []
    for i in range(width_cells * height_cells):
        dx, dy = i % width_cells - cx, i // width_cells - cy
        out.append(base + peak * math.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)))
    return out


def city_metro(width_cells: int, height_cells: int, n_lines: int = 2) -> list[list[int]]:
    """Central metro skeleton: an east-west and a north-south line through the
    core, optionally two diagonals, each spanning the middle of the grid."""
    w, h = width_cells, height_cells
    mid_r, mid_c = h // 2, w // 2
    c0, c1 = w // 6, w - 1 - w // 6
    r0, r1 = h // 6, h - 1 - h // 6
    lines = [
        [mid_r * w + c for c in range(c0, c1 + 1)],
        [r * w + mid_c for r in range(r0, r1 + 1)],
    ]
    if n_lines > 2:
        steps = min(c1 - c0, r1 - r0)
        lines.append([(r0 + s) * w + (c0 + s) for s in range(steps + 1)])
    if n_lines > 3:
        steps = min(c1 - c0, r1 - r0)
        lines.append([(r0 + s) * w + (c1 - s) for s in range(steps + 1)])
    return [ln for ln in lines[:n_lines] if len(ln) >= 2]


def city_scenario(width_cells: int = 12, height_cells: int = 6, seed: int = 0, *,
                  metro_lines: int = 4, num_lines: int = 3, **params) -> Scenario:
    """Synthetic monocentric city used by the CLI defaults and the benchmarks.

    The defaults reproduce the evaluation setting: 72 candidate stops on a
    1 km grid, 3 lines, T_max 30 min, walking 4.5 km/h, buses 28 km/h, 10 buses
    per line.
    """
    spacing = params.pop("spacing", 1.0)
    return generate_grid_scenario(
        width_cells, height_cells, spacing,
        city_metro(width_cells, height_cells, metro_lines),
        city_density(width_cells, height_cells),
        seed, num_lines=num_lines, **params,
    )


# --------------------------------------------------------------------------- #
# persistence

def scenario_to_dict(s: Scenario) -> dict:
    return {
        "format": "equibus-scenario",
        "version": SCHEMA_VERSION,
        "centroids": [{"id": c.id, "x_km": c.location.x, "y_km": c.location.y}
                      for c in s.centroids],
        "pois": [{"id": p.id, "x_km": p.location.x, "y_km": p.location.y, "weight": p.weight}
                 for p in s.pois],
        "stops": [{"id": st.id, "x_km": st.location.x, "y_km": st.location.y, "kind": st.kind}
                  for st in s.stops],
        "metro_lines": [{"id": m.id, "stops": list(m.stops), "headway_min": m.headway}
                        for m in s.metro_lines],
        "params": s.params_dict(),
    }


def _req(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"missing field {key!r} in {where}", key)
    return obj[key]


def _num(obj, key, where, kind=float):
    value = _req(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"field {key!r} in {where} must be a number", key)
    if kind is int:
        if int(value) != value:
            raise ScenarioError(f"field {key!r} in {where} must be an integer", key)
        return int(value)
    return float(value)


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario document must be a JSON object", "<root>")
    params = _req(d, "params", "scenario")
    centroids = tuple(
        Centroid(_num(c, "id", "centroids", int),
                 Point(_num(c, "x_km", "centroids"), _num(c, "y_km", "centroids")))
        for c in _req(d, "centroids", "scenario"))
    pois = tuple(
        Poi(_num(p, "id", "pois", int),
            Point(_num(p, "x_km", "pois"), _num(p, "y_km", "pois")),
            _num(p, "weight", "pois") if "weight" in p else 1.0)
        for p in _req(d, "pois", "scenario"))
    stops = tuple(
        Stop(_num(st, "id", "stops", int),
             Point(_num(st, "x_km", "stops"), _num(st, "y_km", "stops")),
             _req(st, "kind", "stops"))
        for st in _req(d, "stops", "scenario"))
    metro = []
    for m in _req(d, "metro_lines", "scenario"):
        ids = _req(m, "stops", "metro_lines")
        if not isinstance(ids, list) or any(isinstance(i, bool) or not isinstance(i, int)
                                            for i in ids):
            raise ScenarioError("metro line stops must be a list of integer ids", "stops")
        headway = _num(m, "headway_min", "metro_lines") if "headway_min" in m \
            else DEFAULT_METRO_HEADWAY_MIN
        metro.append(MetroLine(_num(m, "id", "metro_lines", int), tuple(ids), headway))
    return Scenario(
        centroids=centroids,
        pois=pois,
        stops=stops,
        metro_lines=tuple(metro),
        walk_speed=_num(params, "walk_speed_kmh", "params"),
        bus_speed=_num(params, "bus_speed_kmh", "params"),
        metro_speed=_num(params, "metro_speed_kmh", "params") if "metro_speed_kmh" in params
        else 35.0,
        fleet_per_line=_num(params, "fleet_per_line", "params", int),
        t_max=_num(params, "t_max_min", "params"),
        num_lines=_num(params, "num_lines", "params", int),
        centroid_spacing=_num(params, "centroid_spacing_km", "params"),
        rng_seed=_num(params, "rng_seed", "params", int),
    )


def save_scenario(s: Scenario, path) -> None:
    text = json.dumps(scenario_to_dict(s), indent=1, sort_keys=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_scenario(path) -> Scenario:
    raw = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}", "<root>") from exc
    return scenario_from_dict(doc)
