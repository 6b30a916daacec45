import json

import numpy as np
import pytest

from smokenet.calibration import select_model
from smokenet.config import load_config, parse_config
from smokenet.errors import ConfigError
from smokenet.scenario import generate_episode, indoor_step, steady_state, write_episode
from smokenet.timeseries import HOUR, TimeSeries, aggregate, align_pairs, reference_mean
from smokenet.wire import resync_and_parse

SMALL = """
[run]
study_start = 2020-09-10T07:00:00Z
study_end = 2020-09-12T07:00:00Z
utc_offset_hours = -7
calibration_node = A:outdoor

[site A]
hepa = yes
penetration = 0.8
air_exchange = 0.5
k_extra = 2.0

[scenario]
seed = 5
outdoor_profile = 0:50, 24:200, 48:80
sensor_gain = {gain}
sensor_offset = 0
sensor_noise = {noise}
reference_noise = {noise}
"""


def test_fixed_point():
    css = steady_state(100.0, 0.8, 0.5, 2.0)
    assert indoor_step(css, 100.0, 0.8, 0.5, 2.0, 10.0) == pytest.approx(css, rel=1e-15)


def test_closed_form_ratio():
    assert steady_state(1.0, 0.8, 0.5, 2.0) == pytest.approx(0.16)


def test_semigroup():
    c = 0.0
    for _ in range(1000):
        c = indoor_step(c, 120.0, 0.8, 0.5, 0.3, 10.0)
    one = indoor_step(0.0, 120.0, 0.8, 0.5, 0.3, 10000.0)
    assert c == pytest.approx(one, rel=1e-9)


def series_for(ds, node):
    nd = ds.nodes[node]
    return aggregate(TimeSeries.raw(node, nd.t, nd.pm25), HOUR)


def ref_series(ds):
    mons = {}
    for t, m, v in ds.reference:
        mons.setdefault(m, []).append((t, v))
    refs = []
    for m, rows in sorted(mons.items()):
        k = len(rows)
        refs.append(TimeSeries(m, HOUR, [t for t, _ in rows], [v for _, v in rows], np.ones(k),
                               np.ones(k, dtype=int), np.ones(k, dtype=bool)))
    return reference_mean(refs)


def test_identity_distortion_recovers_truth():
    ds = generate_episode(parse_config(SMALL.format(gain=1.0, noise=0.0)))
    nd = ds.nodes["A:outdoor"]
    assert np.array_equal(nd.pm25, nd.truth)
    pairs, _ = align_pairs(series_for(ds, "A:outdoor"), ref_series(ds))
    m = select_model([(p, r) for _, p, r in pairs])
    assert m.beta1 == pytest.approx(1.0, abs=1e-9) and m.beta0 == pytest.approx(0.0, abs=1e-6)


def test_inverse_gain_recovered():
    ds = generate_episode(parse_config(SMALL.format(gain=1 / 0.65, noise=3.0)))
    pairs, _ = align_pairs(series_for(ds, "A:outdoor"), ref_series(ds))
    m = select_model([(p, r) for _, p, r in pairs])
    assert m.beta1 == pytest.approx(0.65, abs=0.02)


def test_default_episode_orders_hepa_below_non_hepa():
    gt = generate_episode(load_config()).ground_truth
    hepa = [s["io_median_hourly"] for s in gt["sites"].values() if s["hepa"]]
    other = [s["io_median_hourly"] for s in gt["sites"].values() if not s["hepa"]]
    assert np.median(hepa) < np.median(other)
    shares = gt["personal"]["time_share_pct"]
    assert shares["home"] == pytest.approx(76, abs=0.5)
    assert shares["office"] == pytest.approx(15, abs=0.5)
    assert shares["other"] == pytest.approx(9, abs=0.5)


def test_seed_changes_output():
    cfg = parse_config(SMALL.format(gain=1.2, noise=2.0))
    a = generate_episode(cfg, seed=1).nodes["A:indoor"].pm25
    b = generate_episode(cfg, seed=2).nodes["A:indoor"].pm25
    assert not np.array_equal(a, b)


def test_binary_logs_decode(tmp_path):
    cfg = load_config()
    cfg.run.study_end = cfg.run.study_start + 2 * HOUR
    ds = generate_episode(cfg)
    paths = write_episode(ds, tmp_path, binary=True, personal_node="P1")
    raw = paths["pms:L1:indoor"].read_bytes()
    frames = list(resync_and_parse(raw))
    assert len(frames) == len(ds.nodes["L1:indoor"].t)
    assert [f.pm25_atm for f in frames[:20]] == [min(int(round(v)), 0x7FFF) for v in ds.nodes["L1:indoor"].pm25[:20]]
    assert paths["nmea:P1"].read_text().startswith("$GPRMC")
    gt = json.loads(paths["ground_truth"].read_text())
    assert gt["calibration"]["beta1"] == pytest.approx(1 / 1.45)


def test_schedule_gap_is_config_error():
    cfg = load_config()
    cfg.personal.schedule = [(0, 600, "home")]
    with pytest.raises(ConfigError):
        generate_episode(cfg)
