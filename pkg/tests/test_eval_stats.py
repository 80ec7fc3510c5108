import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from equibus.accessibility import AccessibilityReport
from equibus.errors import DegenerateSampleError, UndefinedRatioError, ValidationError
from equibus.eval_stats import (HEATMAP_COLUMNS, ComparisonReport, cdf_points, export_heatmap,
                                improvement_ratio, one_sample_ttest, read_heatmap,
                                regularized_incomplete_beta, student_t_cdf, student_t_sf)
from equibus.territory import Centroid, Point, Poi, Scenario, Stop, BUS_CANDIDATE
from oracles import t_cdf_by_quadrature


def test_improvement_ratio():
    assert improvement_ratio(1.15, 1.0) == pytest.approx(0.15, abs=1e-15)
    assert improvement_ratio(2.0, 2.0) == 0.0
    with pytest.raises(UndefinedRatioError):
        improvement_ratio(1.0, 0.0)


def test_ttest_hand_example():
    res = one_sample_ttest([0.1, 0.2, 0.3])
    assert res.t_statistic == pytest.approx(2 * math.sqrt(3), rel=1e-12)
    assert res.df == 2 and res.mean == pytest.approx(0.2)
    assert res.p_value == pytest.approx(2 * (1 - t_cdf_by_quadrature(2 * math.sqrt(3), 2)),
                                        abs=1e-12)


def test_symmetric_samples_give_zero_t():
    res = one_sample_ttest([-0.2, -0.1, 0.1, 0.2])
    assert res.t_statistic == 0.0 and res.p_value == pytest.approx(1.0)


def test_degenerate_samples():
    with pytest.raises(DegenerateSampleError):
        one_sample_ttest([0.3])
    with pytest.raises(DegenerateSampleError):
        one_sample_ttest([0.3, 0.3, 0.3])
    with pytest.raises(ValidationError):
        one_sample_ttest([0.1, 0.2], alternative="bigger")


@pytest.mark.parametrize("df", [1, 2, 3, 5, 9, 30, 99])
@pytest.mark.parametrize("t", [-8.0, -2.5, -0.3, 0.0, 0.7, 1.96, 4.0, 12.0])
def test_t_cdf_against_quadrature(t, df):
    assert abs(student_t_cdf(t, df) - t_cdf_by_quadrature(t, df)) <= 1e-10


def test_ttest_against_scipy_random_draws():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 30))
        xs = rng.normal(rng.normal(0, 0.1), rng.uniform(0.01, 0.3), n)
        ours = one_sample_ttest(xs)
        ref = stats.ttest_1samp(xs, 0.0)
        assert ours.t_statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert abs(ours.p_value - ref.pvalue) <= 1e-6
        greater = one_sample_ttest(xs, alternative="greater").p_value
        less = one_sample_ttest(xs, alternative="less").p_value
        assert greater + less == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200)
@given(st.floats(0, 1), st.floats(0.05, 50), st.floats(0.05, 50))
def test_incomplete_beta_against_scipy(x, a, b):
    assert regularized_incomplete_beta(x, a, b) == pytest.approx(stats.beta.cdf(x, a, b),
                                                                 abs=1e-10)


@settings(max_examples=100)
@given(st.floats(-50, 50), st.integers(1, 200))
def test_t_sf_symmetry(t, df):
    assert student_t_sf(t, df) + student_t_sf(-t, df) == pytest.approx(1.0, abs=1e-12)
    assert 0.0 <= student_t_cdf(t, df) <= 1.0


@settings(max_examples=100)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=30))
def test_cdf_points_non_decreasing(values):
    pts = cdf_points(values)
    xs = [p[0] for p in pts]
    fs = [p[1] for p in pts]
    assert xs == sorted(set(xs)) and fs == sorted(fs) and fs[-1] == 1.0
    assert len(pts) == len(set(values))


def test_comparison_report():
    rep = ComparisonReport.from_values([1.1, 1.2, 1.3], [1.0, 1.0, 1.0])
    assert rep.ratios == pytest.approx((0.1, 0.2, 0.3))
    assert rep.t_statistic == pytest.approx(2 * math.sqrt(3))
    assert rep.p_greater == pytest.approx(rep.p_value / 2)
    doc = rep.to_dict()
    assert json.loads(json.dumps(doc))["ratios"] == list(rep.ratios)
    flat = ComparisonReport.from_ratios([0.1, 0.1])
    assert flat.t_statistic is None and flat.p_value is None and flat.std == 0.0
    with pytest.raises(UndefinedRatioError):
        ComparisonReport.from_values([1.0], [0.0])
    with pytest.raises(ValidationError):
        ComparisonReport.from_values([1.0, 2.0], [1.0])


# --------------------------------------------------------------------------- #
# heatmap

def scenario(n):
    cents = tuple(Centroid(i, Point(0.5 * i, 0.25 + i)) for i in range(n))
    return Scenario(cents, (Poi(0, Point(0, 0)),), (Stop(0, Point(1, 1), BUS_CANDIDATE),), (),
                    num_lines=1)


def test_heatmap_round_trip(tmp_path):
    s = scenario(5)
    rng = np.random.default_rng(1)
    base = AccessibilityReport.from_values({i: float(rng.random()) / 3 for i in range(5)})
    imp = AccessibilityReport.from_values({i: float(rng.random()) / 7 for i in range(5)})
    rows = export_heatmap(s, base, imp, 20, tmp_path / "h.csv",
                          geojson_path=tmp_path / "h.geojson")
    assert read_heatmap(tmp_path / "h.csv") == rows
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == ",".join(HEATMAP_COLUMNS)
    doc = json.loads((tmp_path / "h.geojson").read_text())
    assert doc["metadata"]["units"] == "km" and len(doc["features"]) == 5
    assert doc["features"][2]["geometry"]["coordinates"] == [1.0, 2.25]
    for r in rows:
        assert r["delta"] == r["acc_improved"] - r["acc_baseline"]


def test_heatmap_identical_reports(tmp_path):
    s = scenario(4)
    rep = AccessibilityReport.from_values({0: 1.0, 1: 0.5, 2: 2.0, 3: 0.25})
    rows = export_heatmap(s, rep, rep, 100, tmp_path / "h.csv")
    assert all(r["delta"] == 0.0 and r["in_worst_q"] for r in rows)


def test_heatmap_worst_flags(tmp_path):
    s = scenario(3)
    base = AccessibilityReport.from_values({0: 3.0, 1: 1.0, 2: 2.0})
    # ceil(0.33 * 3) = 1 centroid flagged; ceil(0.34 * 3) = 2
    rows = export_heatmap(s, base, base, 33, tmp_path / "h.csv")
    assert [r["in_worst_q"] for r in rows] == [False, True, False]
    rows = export_heatmap(s, base, base, 34, tmp_path / "h.csv")
    assert [r["in_worst_q"] for r in rows] == [False, True, True]


def test_heatmap_centroid_mismatch(tmp_path):
    s = scenario(3)
    good = AccessibilityReport.from_values({0: 1.0, 1: 1.0, 2: 1.0})
    bad = AccessibilityReport.from_values({0: 1.0, 1: 1.0, 7: 1.0})
    with pytest.raises(ValidationError):
        export_heatmap(s, good, bad, 20, tmp_path / "h.csv")


def test_read_heatmap_rejects_other_csv(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        read_heatmap(p)
