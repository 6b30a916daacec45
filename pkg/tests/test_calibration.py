import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smokenet.calibration import (
    FORMS, IDENTITY, CalibrationError, CalibrationModel, apply, bic, bic_score, fit, fit_all,
    load_model, metrics, save_model, select_model,
)
from smokenet.timeseries import HOUR, TimeSeries


def noisy_line(n=264, seed=7, slope=0.7, intercept=5.0, sigma=5.0):
    rng = random.Random(seed)
    xs = [rng.uniform(5, 300) for _ in range(n)]
    return [(x, slope * x + intercept + rng.gauss(0, sigma)) for x in xs]


def solve(a, b):
    """Gaussian elimination with partial pivoting on small dense systems."""
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(m[r][c]))
        m[c], m[p] = m[p], m[c]
        for r in range(c + 1, n):
            f = m[r][c] / m[c][c]
            for k in range(c, n + 1):
                m[r][k] -= f * m[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (m[r][n] - sum(m[r][k] * x[k] for k in range(r + 1, n))) / m[r][r]
    return x


def normal_equations(pairs, powers):
    a = [[sum(x ** (p + q) for x, _ in pairs) for q in powers] for p in powers]
    b = [sum(y * x ** p for x, y in pairs) for p in powers]
    return solve(a, b)


def test_exact_line():
    m = fit([(x, 2 + 3 * x) for x in range(10)], "linear/free")
    assert m.beta0 == pytest.approx(2) and m.beta1 == pytest.approx(3)
    assert m.rmse == pytest.approx(0, abs=1e-9)


def test_exact_proportion():
    m = fit([(x, 0.65 * x) for x in range(1, 10)], "linear/zero")
    assert m.beta0 == 0 and m.beta1 == pytest.approx(0.65)


@pytest.mark.parametrize("form,powers", [
    ("linear/free", [0, 1]), ("linear/zero", [1]), ("quadratic/free", [0, 1, 2]), ("quadratic/zero", [1, 2]),
])
def test_against_normal_equations(form, powers):
    pairs = noisy_line()
    m = fit(pairs, form)
    coefs = dict(zip(powers, normal_equations(pairs, powers)))
    assert m.beta0 == pytest.approx(coefs.get(0, 0.0), rel=1e-6, abs=1e-8)
    assert m.beta1 == pytest.approx(coefs[1], rel=1e-6)
    if 2 in coefs:
        assert m.beta2 == pytest.approx(coefs[2], rel=1e-5, abs=1e-12)
    if form == "linear/free":
        assert abs(m.beta1 - 0.7) <= 0.05 and abs(m.beta0 - 5) <= 3


def test_bic_hand_values():
    assert bic_score(200, 50, 2) == pytest.approx(50 * math.log(4) + 2 * math.log(50))
    assert bic_score(200, 50, 2) == pytest.approx(77.139, abs=1e-3)
    assert bic_score(10, 100, 3) - bic_score(10, 100, 2) == pytest.approx(math.log(100), abs=1e-12)


def test_bic_floor():
    exact = fit([(x, 2 + 3 * x) for x in range(10)], "linear/free")
    noisy = fit([(x, 2 + 3 * x + (-1) ** x * 0.01) for x in range(10)], "linear/free")
    assert math.isfinite(exact.bic) and exact.bic < noisy.bic


@given(st.floats(1e-6, 1e6), st.integers(5, 10000), st.integers(1, 3))
def test_bic_penalty_monotone(rss, n, k):
    assert bic_score(rss, n, k + 1) > bic_score(rss, n, k)


def test_bic_of_model_matches_score():
    pairs = noisy_line(50)
    m = fit(pairs, "quadratic/free")
    assert bic(m, pairs) == pytest.approx(bic_score(m.rss, 50, 3))


def test_noisy_linear_selects_linear_and_bootstrap_covers_zero():
    pairs = noisy_line(seed=21)
    assert select_model(pairs).form.startswith("linear")
    rng = random.Random(5)
    b2 = []
    for _ in range(300):
        sample = [pairs[rng.randrange(len(pairs))] for _ in pairs]
        b2.append(normal_equations(sample, [0, 1, 2])[2])
    b2.sort()
    lo, hi = b2[int(0.025 * len(b2))], b2[int(0.975 * len(b2)) - 1]
    assert lo < 0 < hi


def test_square_selects_quadratic():
    pairs = [(x / 10, (x / 10) ** 2) for x in range(101)]
    best_lin = min(fit(pairs, f).rss for f in FORMS if f.startswith("linear"))
    best_quad = min(fit(pairs, f).rss for f in FORMS if f.startswith("quadratic"))
    assert best_quad < best_lin
    assert select_model(pairs).form.startswith("quadratic")


def test_degenerate_column():
    with pytest.raises(CalibrationError, match="pms"):
        select_model([(5.0, float(i)) for i in range(20)])


def test_too_few_pairs():
    with pytest.raises(CalibrationError):
        fit([(1.0, 1.0), (2.0, 2.0), (3.0, 3.5)], "linear/free")


@settings(max_examples=30)
@given(st.randoms())
def test_selection_order_invariant(rnd):
    pairs = noisy_line(60, seed=3)
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    a, b = select_model(pairs), select_model(shuffled)
    assert a.form == b.form
    assert (a.beta0, a.beta1, a.beta2) == (b.beta0, b.beta1, b.beta2)


def test_nesting_and_post_rmse():
    pairs = noisy_line(100, seed=9, slope=1.3, intercept=-4)
    models = fit_all(pairs)
    assert models["quadratic/free"].rss <= models["linear/free"].rss + 1e-9
    assert models["linear/free"].rss <= models["linear/zero"].rss + 1e-9
    assert models["linear/free"].rss <= metrics(IDENTITY, pairs)["rss"]
    assert metrics(select_model(pairs), pairs)["rmse"] <= metrics(IDENTITY, pairs)["rmse"]


def series(vals):
    k = len(vals)
    return TimeSeries("n", HOUR, [i * HOUR for i in range(k)], vals, np.ones(k), np.ones(k, dtype=int),
                      np.ones(k, dtype=bool))


def test_apply():
    s = series([50.0, 100.0, 150.0])
    assert apply(IDENTITY, s).mean.tolist() == s.mean.tolist()
    m = CalibrationModel("linear/free", 1.2, 0.68)
    got = apply(m, s)
    assert got.mean.tolist() == pytest.approx([1.2 + 0.68 * v for v in (50, 100, 150)])
    assert got.mean.tolist() == pytest.approx([35.2, 69.2, 103.2])
    c = apply(CalibrationModel("linear/free", -10.0, 1.0), series([4.0]))
    assert c.mean.tolist() == [0.0] and c.meta["clamped"] == 1


def test_metrics():
    pairs = [(x, 2 * x) for x in range(1, 8)]
    m = fit(pairs, "linear/zero")
    got = metrics(m, pairs)
    assert got["rmse"] == pytest.approx(0, abs=1e-9) and got["r2"] == pytest.approx(1)
    ys = [y for _, y in pairs]
    flat = CalibrationModel("linear/free", sum(ys) / len(ys), 0.0)
    assert metrics(flat, pairs)["r2"] == pytest.approx(0, abs=1e-12)


def test_metrics_two_pass_oracle():
    pairs = noisy_line(200, seed=13)
    m = CalibrationModel("linear/free", 4.0, 0.71)
    ybar = sum(y for _, y in pairs) / len(pairs)
    rss = sum((y - (4.0 + 0.71 * x)) ** 2 for x, y in pairs)
    tss = sum((y - ybar) ** 2 for _, y in pairs)
    got = metrics(m, pairs)
    assert got["rmse"] == pytest.approx(math.sqrt(rss / len(pairs)), rel=1e-9)
    assert got["r2"] == pytest.approx(1 - rss / tss, rel=1e-9)


def test_save_load(tmp_path):
    m = select_model(noisy_line())
    save_model(m, tmp_path / "m.json", training_node="L7:outdoor")
    back = load_model(tmp_path / "m.json")
    assert (back.form, back.beta0, back.beta1, back.beta2) == (m.form, m.beta0, m.beta1, m.beta2)


def test_parallel_application_matches_sequential():
    m = CalibrationModel("quadratic/free", 1.0, 0.6, 0.001)
    vals = np.random.default_rng(2).uniform(0, 300, 500)
    whole = apply(m, series(vals.tolist())).mean
    parts = np.concatenate([apply(m, series(vals[i:i + 50].tolist())).mean for i in range(0, 500, 50)])
    assert whole.tobytes() == parts.tobytes()
