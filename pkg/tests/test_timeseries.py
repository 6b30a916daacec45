import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from smokenet.timeseries import (
    DAY, HOUR, TEN_MIN, TimeSeries, aggregate, align_pairs, iso, reaggregate, reference_mean,
    to_epoch,
)

T0 = to_epoch("2020-09-12T00:00:00Z")


def hourly(node, values, start=0):
    k = len(values)
    return TimeSeries(node, HOUR, [T0 + (start + i) * HOUR for i in range(k)], values,
                      np.ones(k), np.ones(k, dtype=int), np.ones(k, dtype=bool))


def test_mean_of_three():
    s = aggregate(TimeSeries.raw("n", [T0, T0 + 10, T0 + 20], [10, 20, 30]), TEN_MIN, min_coverage=0)
    assert s.mean.tolist() == [20.0] and s.n_samples.tolist() == [3]


def test_single_sample_window_invalid():
    s = aggregate(TimeSeries.raw("n", [T0 + 5], [42.0]), TEN_MIN, 0.75)
    assert s.coverage[0] == pytest.approx(1 / 60)
    assert not s.valid[0]
    assert s.as_dict() == {}


def test_deleted_samples_streaming_oracle():
    rng = random.Random(11)
    ts = [T0 + 10 * i for i in range(360)]
    vs = [rng.uniform(0, 300) for _ in ts]
    keep = sorted(rng.sample(range(360), 270))
    total, n = 0.0, 0
    for i in keep:
        total += vs[i]
        n += 1
    s = aggregate(TimeSeries.raw("n", [ts[i] for i in keep], [vs[i] for i in keep]), HOUR)
    assert s.mean[0] == pytest.approx(total / n, rel=1e-12)
    assert s.coverage[0] == 0.75 and s.valid[0]


samples = st.lists(st.tuples(st.integers(0, 3 * HOUR), st.floats(0, 1000)), min_size=1, max_size=200)


@given(samples, st.randoms())
def test_order_independent_and_bounded(rows, rnd):
    t = [T0 + a for a, _ in rows]
    v = [b for _, b in rows]
    a = aggregate(TimeSeries.raw("n", t, v), TEN_MIN)
    shuffled = list(zip(t, v))
    rnd.shuffle(shuffled)
    b = aggregate(TimeSeries.raw("n", [x for x, _ in shuffled], [y for _, y in shuffled]), TEN_MIN)
    assert a.mean.tobytes() == b.mean.tobytes()
    for start, m in zip(a.start, a.mean):
        inside = [y for x, y in zip(t, v) if start <= x < start + TEN_MIN]
        assert min(inside) <= m <= max(inside)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.0, 0.2))
def test_day_reaggregation_conserves_sum(seed, gap_rate):
    rng = np.random.default_rng(seed)
    keep = rng.random(8640) >= gap_rate
    t = (T0 + 10 * np.arange(8640))[keep]
    raw = TimeSeries.raw("n", t, rng.uniform(0, 500, keep.sum()))
    direct = aggregate(raw, DAY)
    via_hours = reaggregate(aggregate(raw, HOUR, min_coverage=0), DAY)
    assert via_hours.mean[0] == pytest.approx(direct.mean[0], rel=1e-9, abs=1e-9)
    assert via_hours.n_samples[0] == direct.n_samples[0] == keep.sum()


def test_align_self_and_disjoint():
    a = hourly("a", [1.0] * 10)
    pairs, dropped = align_pairs(a, a)
    assert len(pairs) == 10 and dropped == 0
    b = hourly("b", [1.0] * 4, start=20)
    pairs, dropped = align_pairs(a, b)
    assert pairs == [] and dropped == 14


def test_align_overlap():
    a = hourly("a", [float(i) for i in range(10)])
    b = hourly("b", [float(i) for i in range(5, 15)], start=5)
    pairs, dropped = align_pairs(a, b)
    assert [t for t, _, _ in pairs] == sorted({T0 + i * HOUR for i in range(10)} & {T0 + i * HOUR for i in range(5, 15)})
    assert len(pairs) == 5 and dropped == 10


def test_align_window_mismatch():
    with pytest.raises(ValueError):
        align_pairs(hourly("a", [1.0]), TimeSeries.empty("b", TEN_MIN))


def test_reference_mean():
    r = reference_mean([hourly("a", [100.0]), hourly("b", [120.0])])
    assert r.mean.tolist() == [110.0]
    r = reference_mean([hourly("a", [100.0, 5.0]), hourly("b", [120.0])])
    assert r.mean.tolist() == [110.0, 5.0]
    assert r.valid.tolist() == [True, True]
    r = reference_mean([hourly("a", [100.0, 5.0]), hourly("b", [120.0])], min_monitors=2)
    assert r.valid.tolist() == [True, False]


def test_reference_mean_oracle():
    rng = np.random.default_rng(3)
    grid = rng.uniform(0, 200, size=(2, 12))
    r = reference_mean([hourly("a", grid[0].tolist()), hourly("b", grid[1].tolist())])
    expect = [sum(col) / 2 for col in grid.T.tolist()]
    assert r.mean.tolist() == pytest.approx(expect, rel=1e-15)


def test_iso_roundtrip():
    assert iso(to_epoch("2020-09-12T01:02:03Z")) == "2020-09-12T01:02:03Z"
    assert to_epoch("2020-09-12T01:00:00-07:00") == to_epoch("2020-09-12T08:00:00Z")
