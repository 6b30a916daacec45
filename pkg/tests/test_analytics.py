import itertools
import math
import random
import statistics
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from smokenet.analytics import (
    correlation, doubled_midranks, io_ratio, network_average, pearson, pm_reduction,
    reduction_percent, site_row, summarize_table, wilcoxon_signed_rank,
)
from smokenet.timeseries import HOUR, TimeSeries


def hourly(values, node="n", start=0):
    k = len(values)
    return TimeSeries(node, HOUR, [(start + i) * HOUR for i in range(k)], values, np.ones(k),
                      np.ones(k, dtype=int), np.ones(k, dtype=bool))


def test_io_identity_and_two_point():
    a = hourly([5.0, 7.0, 9.0])
    assert io_ratio(a, a).ratio.tolist() == [1.0, 1.0, 1.0]
    io = io_ratio(hourly([20.0, 40.0]), hourly([100.0, 80.0]))
    assert io.ratio.tolist() == pytest.approx([0.2, 0.5])
    assert io.summary["median"] == pytest.approx(0.35)


def test_io_summary_oracle():
    rng = random.Random(8)
    ind = [rng.uniform(1, 100) for _ in range(264)]
    out = [rng.uniform(50, 300) for _ in range(264)]
    s = io_ratio(hourly(ind), hourly(out)).summary
    r = sorted(i / o for i, o in zip(ind, out))
    assert s["min"] == r[0] and s["max"] == r[-1]
    assert s["median"] == pytest.approx((r[131] + r[132]) / 2, rel=1e-15)
    assert s["mean"] == pytest.approx(sum(r) / len(r), rel=1e-12)


def test_io_skips_zero_outdoor():
    io = io_ratio(hourly([1.0, 2.0]), hourly([0.0, 4.0]))
    assert io.ratio.tolist() == [0.5] and io.skipped == 1


@pytest.mark.parametrize("o,i,expect", [(102.0, 20.9, 79.5), (114.5, 58.7, 48.7)])
def test_reduction_rows(o, i, expect):
    assert reduction_percent(o, i) == pytest.approx(expect, abs=0.06)


def test_reduction_none_and_zero():
    assert reduction_percent(50.0, 50.0) == 0.0
    assert reduction_percent(0.0, 5.0) is None
    assert pm_reduction(hourly([50.0]), hourly([100.0])) == pytest.approx(50.0)


def test_network_average():
    na = network_average([hourly([1.0]), hourly([3.0])])
    assert na.mean.tolist() == [2.0] and na.sigma[0] == pytest.approx(math.sqrt(2))
    na = network_average([hourly([4.0]), hourly([4.0])])
    assert na.sigma.tolist() == [0.0]
    assert math.isnan(network_average([hourly([4.0])]).sigma[0])


def test_network_average_oracle():
    grid = np.random.default_rng(4).uniform(0, 200, (4, 24))
    na = network_average([hourly(row.tolist()) for row in grid])
    for h in range(24):
        col = grid[:, h].tolist()
        assert na.mean[h] == pytest.approx(statistics.fmean(col), rel=1e-12)
        assert na.sigma[h] == pytest.approx(statistics.stdev(col), rel=1e-9)
        assert na.n[h] == 4


def test_correlation():
    a = [float(x) for x in range(10)]
    assert correlation(hourly(a), hourly([2 * x + 1 for x in a])) == pytest.approx(1.0)
    assert correlation(hourly(a), hourly([-x for x in a])) == pytest.approx(-1.0)


def test_pearson_oracle():
    rng = random.Random(12)
    x = [rng.gauss(0, 1) for _ in range(100)]
    y = [v + rng.gauss(0, 0.5) for v in x]
    mx, my = sum(x) / 100, sum(y) / 100
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    r = cov / math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
    assert pearson(x, y) == pytest.approx(r, abs=1e-12)


def test_pearson_constant_is_none():
    assert pearson([1, 2, 3], [4, 4, 4]) is None


# -------------------------------------------------------------- Wilcoxon

def enumerate_oracle(d):
    """Statistic and exact two-sided p from all 2^n sign assignments."""
    nz = [v for v in d if v != 0]
    a = [abs(v) for v in nz]
    ranks = []
    for v in a:
        below = sum(1 for u in a if u < v)
        equal = sum(1 for u in a if u == v)
        ranks.append(Fraction(2 * below + equal + 1, 2))
    w_plus = sum(r for r, v in zip(ranks, nz) if v > 0)
    w = min(w_plus, sum(ranks) - w_plus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(nz)):
        tp = sum(r for r, s in zip(ranks, signs) if s)
        if min(tp, sum(ranks) - tp) <= w:
            hits += 1
    return w, Fraction(hits, 2 ** len(nz))


def test_all_positive_five():
    r = wilcoxon_signed_rank([(d, 0) for d in (1, 2, 3, 4, 5)])
    assert r.w_minus == 0 and r.p_value == 0.0625 and r.method == "exact"


def test_symmetric_tie():
    r = wilcoxon_signed_rank([(1, 0), (-1, 0)])
    assert r.w_plus == r.w_minus == 1.5 and r.p_value == 1.0


def test_all_zero_is_degenerate():
    r = wilcoxon_signed_rank([(2, 2), (3, 3)])
    assert r.degenerate and r.p_value == 1.0


def test_n12_enumeration():
    rng = random.Random(12)
    d = [rng.choice([-1, 1]) * rng.randint(1, 9) for _ in range(12)]
    r = wilcoxon_signed_rank([(v, 0) for v in d])
    w, p = enumerate_oracle(d)
    assert r.statistic == float(w) and r.exact_p == p


@given(st.lists(st.integers(-6, 6), min_size=1, max_size=9))
def test_property_matches_enumeration(d):
    r = wilcoxon_signed_rank([(v, 0) for v in d])
    if all(v == 0 for v in d):
        assert r.degenerate
        return
    w, p = enumerate_oracle(d)
    assert r.statistic == float(w) and r.exact_p == p


def test_normal_approx_close_to_exact():
    rng = random.Random(1)
    for n in range(15, 21):
        for _ in range(10):
            d = [rng.gauss(0.3, 1) for _ in range(n)]
            exact = wilcoxon_signed_rank([(v, 0) for v in d]).p_value
            approx = wilcoxon_signed_rank([(v, 0) for v in d], exact_max=0).p_value
            assert abs(exact - approx) < 0.02


def test_large_n_uses_normal():
    r = wilcoxon_signed_rank([(i + 0.5, 0) for i in range(30)])
    assert r.method == "normal_approx" and r.p_value < 1e-5


def test_midranks():
    assert doubled_midranks([3, 1, 3, 2]) == [7, 2, 7, 4]


# ------------------------------------------------------------- site table

def test_constant_site_row():
    row = site_row("X", hourly([50.0] * 5), hourly([100.0] * 5), hepa=True)
    assert row.as_row()[1:] == [True, 50, 50, 100, 100, 0.5, 0.5, 0.5, 0.5, 50.0, 5]


def test_reduction_column_consistent():
    rng = random.Random(3)
    sites = {}
    for k in range(5):
        sites[f"S{k}"] = (hourly([rng.uniform(5, 80) for _ in range(24)]),
                          hourly([rng.uniform(60, 200) for _ in range(24)]))
    for row in summarize_table(sites):
        assert row.reduction_pct == pytest.approx((1 - row.indoor_mean / row.outdoor_mean) * 100, rel=1e-12)


def test_missing_outdoor_leaves_cells_empty():
    row = site_row("X", hourly([1.0]), None)
    assert row.outdoor_mean is None and row.reduction_pct is None and row.io_hours == 0
