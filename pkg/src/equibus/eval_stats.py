"""Comparing optimizers: improvement ratios, a one-sample t-test, CDF points
and per-centroid heatmap export.

The Student-t tail probabilities come from a continued-fraction evaluation of
the regularized incomplete beta function, so no statistics package is needed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .accessibility import AccessibilityReport, worst_set
from .errors import DegenerateSampleError, UndefinedRatioError, ValidationError
from .territory import Scenario

HEATMAP_COLUMNS = ("centroid_id", "x_km", "y_km", "acc_baseline", "acc_improved", "delta",
                   "in_worst_q")
ALTERNATIVES = ("two-sided", "greater", "less")


def improvement_ratio(acc_algo: float, acc_random: float) -> float:
    """Relative gain ``(acc_algo - acc_random) / acc_random``."""
    if not acc_random > 0:
        raise UndefinedRatioError(f"baseline accessibility must be > 0, got {acc_random}")
    return (acc_algo - acc_random) / acc_random


# --------------------------------------------------------------------------- #
# Student t distribution

def _beta_cf(x: float, a: float, b: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    c = 1.0
    d = 1.0 - (a + b) * x / (a + 1.0)
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        # even step
        num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + num / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        # odd step
        num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0))
        d = 1.0 + num * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + num / c
        c = c if abs(c) > tiny else tiny
        step = d * c
        h *= step
        if abs(step - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for x={x}, a={a}, b={b}")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """``I_x(a, b)`` for ``0 <= x <= 1`` and ``a, b > 0``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    # the fraction converges fast below the mean; use the symmetry otherwise
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(x, a, b) / a
    return 1.0 - math.exp(log_front) * _beta_cf(1.0 - x, b, a) / b


def student_t_sf(t: float, df: float) -> float:
    """``P(T > t)`` for Student's t with ``df`` degrees of freedom."""
    if not df > 0:
        raise ValueError("df must be positive")
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * regularized_incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
    return tail if t >= 0 else 1.0 - tail


def student_t_cdf(t: float, df: float) -> float:
    return 1.0 - student_t_sf(t, df) if t >= 0 else student_t_sf(-t, df)


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    p_value: float
    df: int
    mean: float
    std: float
    alternative: str = "two-sided"


def one_sample_ttest(samples: Sequence[float], h0_mean: float = 0.0,
                     alternative: str = "two-sided") -> TTestResult:
    """One-sample t-test of ``mean(samples) == h0_mean``.

    ``alternative`` is ``"two-sided"``, ``"greater"`` (mean above ``h0_mean``)
    or ``"less"``.
    """
    if alternative not in ALTERNATIVES:
        raise ValidationError(f"alternative must be one of {ALTERNATIVES}")
    xs = [float(v) for v in samples]
    n = len(xs)
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 samples, got {n}")
    mean = math.fsum(xs) / n
    var = math.fsum((v - mean) ** 2 for v in xs) / (n - 1)
    if not var > 0:
        raise DegenerateSampleError("sample variance is zero")
    std = math.sqrt(var)
    t = (mean - h0_mean) / (std / math.sqrt(n))
    df = n - 1
    if alternative == "greater":
        p = student_t_sf(t, df)
    elif alternative == "less":
        p = student_t_sf(-t, df)
    else:
        p = min(1.0, 2.0 * student_t_sf(abs(t), df))
    return TTestResult(t, p, df, mean, std, alternative)


# --------------------------------------------------------------------------- #
# comparison reports

def cdf_points(values: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical CDF as ``(value, fraction <= value)`` steps, one per distinct value."""
    xs = sorted(float(v) for v in values)
    n = len(xs)
    out = []
    for i, v in enumerate(xs):
        if i + 1 < n and xs[i + 1] == v:
            continue
        out.append((v, (i + 1) / n))
    return out


@dataclass(frozen=True)
class ComparisonReport:
    """Improvement of one optimizer over random search across paired trials."""

    ratios: tuple[float, ...]
    mean: float
    std: float
    t_statistic: float | None
    p_value: float | None
    p_greater: float | None
    cdf: tuple[tuple[float, float], ...] = field(default_factory=tuple)

    @classmethod
    def from_values(cls, acc_algo: Sequence[float], acc_random: Sequence[float]
                    ) -> "ComparisonReport":
        if len(acc_algo) != len(acc_random):
            raise ValidationError("need one random-search value per optimizer value")
        return cls.from_ratios([improvement_ratio(a, r) for a, r in zip(acc_algo, acc_random)])

    @classmethod
    def from_ratios(cls, ratios: Sequence[float]) -> "ComparisonReport":
        """Summary of ``ratios``; the t-test fields are None when undefined
        (fewer than 2 trials or zero spread)."""
        ratios = tuple(float(r) for r in ratios)
        if not ratios:
            raise ValidationError("no ratios to summarise")
        n = len(ratios)
        mean = math.fsum(ratios) / n
        std = math.sqrt(math.fsum((r - mean) ** 2 for r in ratios) / (n - 1)) if n > 1 else 0.0
        try:
            two = one_sample_ttest(ratios, 0.0)
            t, p = two.t_statistic, two.p_value
            p_greater = one_sample_ttest(ratios, 0.0, "greater").p_value
        except DegenerateSampleError:
            t = p = p_greater = None
        return cls(ratios, mean, std, t, p, p_greater, tuple(cdf_points(ratios)))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["ratios"] = list(self.ratios)
        out["cdf"] = [list(pt) for pt in self.cdf]
        return out


# --------------------------------------------------------------------------- #
# heatmap export

def _heatmap_rows(s: Scenario, baseline: AccessibilityReport, improved: AccessibilityReport,
                  q: float) -> list[dict]:
    ids = [c.id for c in s.centroids]
    if set(baseline.per_centroid) != set(ids) or set(improved.per_centroid) != set(ids):
        raise ValidationError("reports do not cover the scenario's centroid set")
    worst = set(worst_set(baseline.per_centroid, q))
    rows = []
    for c in s.centroids:
        a0, a1 = baseline.per_centroid[c.id], improved.per_centroid[c.id]
        rows.append({"centroid_id": c.id, "x_km": c.location.x, "y_km": c.location.y,
                     "acc_baseline": a0, "acc_improved": a1, "delta": a1 - a0,
                     "in_worst_q": c.id in worst})
    return rows


def export_heatmap(s: Scenario, baseline: AccessibilityReport, improved: AccessibilityReport,
                   q: float, path, *, geojson_path=None) -> list[dict]:
    """Write the per-centroid comparison as CSV (and optionally GeoJSON).

    ``in_worst_q`` marks the baseline's worst-q% centroids; renderers blank
    the others.  Floats are written with ``repr`` so re-reading is exact.
    """
    rows = _heatmap_rows(s, baseline, improved, q)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEATMAP_COLUMNS)
        for r in rows:
            w.writerow([r["centroid_id"], repr(r["x_km"]), repr(r["y_km"]),
                        repr(r["acc_baseline"]), repr(r["acc_improved"]), repr(r["delta"]),
                        "true" if r["in_worst_q"] else "false"])
    if geojson_path is not None:
        doc = {
            "type": "FeatureCollection",
            "metadata": {"crs": "planar", "units": "km", "q": q},
            "features": [{
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r["x_km"], r["y_km"]]},
                "properties": {k: r[k] for k in HEATMAP_COLUMNS if k not in ("x_km", "y_km")},
            } for r in rows],
        }
        Path(geojson_path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return rows


def read_heatmap(path) -> list[dict]:
    """Rows of a heatmap CSV with their original types."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != HEATMAP_COLUMNS:
            raise ValidationError(f"{path}: unexpected heatmap columns {reader.fieldnames}")
        rows = []
        for r in reader:
            rows.append({"centroid_id": int(r["centroid_id"]),
                         **{k: float(r[k]) for k in HEATMAP_COLUMNS[1:6]},
                         "in_worst_q": r["in_worst_q"] == "true"})
    return rows
