"""Deterministic synthetic smoke episodes for exercising the pipeline end to end.

Indoor air follows a single-zone mass balance::

    dC_in/dt = P*a*C_out - (a + k)*C_in

with penetration ``P``, air exchange ``a`` and extra first-order losses ``k``
(filtration, deposition, HVAC when running), all rates per hour.  With
``C_out`` held constant across a step the update is exact, so any step size
gives the same trajectory.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import StudyConfig
from .errors import ConfigError
from .exposure import EARTH_RADIUS_M, LABELS, OTHER
from .records import REFERENCE_COLUMNS, SAMPLE_COLUMNS
from .timeseries import HOUR, iso
from .wire import GpsFix, SensorFrame, encode_frame, format_rmc



def steady_state(c_out: float, p: float, a: float, k_total: float) -> float:
    return p * a * c_out / (a + k_total)


def indoor_step(c_in: float, c_out: float, p: float, a: float, k_total: float, dt: float) -> float:
    """Advance the indoor concentration by ``dt`` seconds (rates in 1/h)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    loss = a + k_total
    css = p * a * c_out / loss
    return css + (c_in - css) * math.exp(-loss * dt / 3600.0)


@dataclass
class NodeData:
    location_class: str
    t: np.ndarray
    pm25: np.ndarray    # what the sensor reports
    truth: np.ndarray   # what the air held


@dataclass
class EpisodeDataset:
    nodes: dict[str, NodeData]
    fixes: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None
    reference: list[tuple[int, str, float]]
    ground_truth: dict
    config_text: str = ""
    labels: np.ndarray | None = field(default=None, repr=False)


def _outdoor_truth(cfg: StudyConfig, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    sc = cfg.scenario
    hours = (t - cfg.run.study_start) / 3600.0
    hp, vp = zip(*sc.outdoor_profile)
    base = np.interp(hours, hp, vp)
    if sc.outdoor_variability > 0:
        n_h = int(math.ceil(hours[-1])) + 2
        z = np.empty(n_h)
        z[0] = rng.standard_normal()
        for i in range(1, n_h):
            z[i] = 0.8 * z[i - 1] + 0.6 * rng.standard_normal()
        base = base * np.exp(sc.outdoor_variability * np.interp(hours, np.arange(n_h), z))
    return base


def _local_seconds(cfg: StudyConfig, t: np.ndarray) -> np.ndarray:
    return (t + int(round(cfg.run.utc_offset_hours * 3600))) % 86400


def _simulate_site(site, c_out: np.ndarray, local_s: np.ndarray, period: float) -> np.ndarray:
    d = site.dynamics
    minutes = local_s / 60.0
    on = np.zeros(len(c_out), dtype=bool)
    for band in d.hvac_on:
        on |= _band_mask(minutes, band)
    k = d.k_extra + d.hvac_k * on
    inject = np.zeros(len(c_out))
    for minute, amount in d.cooking:
        at = minute * 60
        inject[(local_s <= at) & (at < local_s + period)] += amount
    loss = d.air_exchange + k
    decay = np.exp(-loss * period / 3600.0)
    css = d.penetration * d.air_exchange * c_out / loss
    out = np.empty(len(c_out))
    c = float(css[0])
    for i in range(len(c_out)):
        c += inject[i]
        out[i] = c
        c = css[i] + (c - css[i]) * decay[i]
    return out


def _band_mask(minutes: np.ndarray, band: tuple[int, int]) -> np.ndarray:
    a, b = band
    if a <= b:
        return (minutes >= a) & (minutes < b)
    return (minutes >= a) | (minutes < b)


def _schedule_labels(cfg: StudyConfig, local_s: np.ndarray) -> np.ndarray:
    sched = cfg.personal.schedule
    covered = np.zeros(24 * 60, dtype=int)
    for a, b, label in sched:
        if label not in LABELS:
            raise ConfigError(f"[personal] unknown microenvironment {label!r}")
        covered[_band_mask(np.arange(24 * 60), (a, b))] += 1
    if (covered == 0).any():
        first = int(np.flatnonzero(covered == 0)[0])
        raise ConfigError(f"[personal] schedule leaves a gap at {first // 60:02d}:{first % 60:02d}")
    if (covered > 1).any():
        raise ConfigError("[personal] schedule intervals overlap")
    minutes = local_s / 60.0
    labels = np.empty(len(local_s), dtype=object)
    for a, b, label in sched:
        labels[_band_mask(minutes, (a, b))] = label
    return labels


def _jitter(rng, lat0: float, lon0: float, sigma_m: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    dy = rng.normal(0.0, sigma_m, n)
    dx = rng.normal(0.0, sigma_m, n)
    lat = lat0 + np.degrees(dy / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(dx / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def _hourly_means(t: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    keys = (t // HOUR) * HOUR
    cuts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    counts = np.diff(np.r_[cuts, len(keys)])
    return keys[cuts], np.add.reduceat(v, cuts) / counts


def _true_attribution(t: np.ndarray, conc: np.ndarray, labels: np.ndarray, offset_s: int) -> dict:
    day = (t + offset_s) // 86400
    per_label_exposure = {k: 0.0 for k in LABELS}
    per_label_time = {k: 0.0 for k in LABELS}
    total = 0.0
    days = np.unique(day)
    for d in days:
        m = day == d
        n = m.sum()
        for k in LABELS:
            mk = m & (labels == k)
            nk = mk.sum()
            if nk:
                ac = conc[mk].mean() * nk / n
                per_label_exposure[k] += ac
                total += ac
            per_label_time[k] += nk
    n_all = len(t)
    return {
        "exposure_share_pct": {k: 100.0 * v / total for k, v in per_label_exposure.items()},
        "time_share_pct": {k: 100.0 * v / n_all for k, v in per_label_time.items()},
        "days": int(len(days)),
    }


def generate_episode(cfg: StudyConfig, seed: int | None = None) -> EpisodeDataset:
    """Simulate every configured node plus the reference monitors."""
    sc = cfg.scenario
    run = cfg.run
    rng = np.random.default_rng(sc.seed if seed is None else seed)
    period = run.sample_period_s
    if period <= 0 or period != int(period):
        raise ConfigError("[run] sample_period_s must be a positive whole number of seconds")
    t = np.arange(run.study_start, run.study_end, int(period), dtype=np.int64)
    if len(t) == 0:
        raise ConfigError("[run] empty study window")
    offset_s = int(round(run.utc_offset_hours * 3600))
    local_s = _local_seconds(cfg, t)
    c_out = _outdoor_truth(cfg, t, rng)

    truth: dict[str, np.ndarray] = {"outdoor": c_out}
    for loc, site in cfg.sites.items():
        truth[loc] = _simulate_site(site, c_out, local_s, period)

    def measure(v: np.ndarray) -> np.ndarray:
        raw = sc.sensor_gain * v + sc.sensor_offset
        if sc.sensor_noise > 0:
            raw = raw + rng.normal(0.0, sc.sensor_noise, len(v))
        return np.maximum(raw, 0.0)

    nodes: dict[str, NodeData] = {}
    for loc, site in cfg.sites.items():
        m = site.meta
        nodes[m.indoor_node] = NodeData("indoor", t, measure(truth[loc]), truth[loc])
        if m.outdoor_node not in nodes:
            keep = np.ones(len(t), dtype=bool)
            stop = site.dynamics.outdoor_stop_after_h
            if stop is not None:
                keep = t < run.study_start + stop * 3600
            nodes[m.outdoor_node] = NodeData("outdoor", t[keep], measure(c_out)[keep], c_out[keep])

    fixes = None
    labels = None
    personal_truth = None
    pcfg = cfg.personal
    if pcfg.node and pcfg.schedule:
        labels = _schedule_labels(cfg, local_s)
        personal_truth = np.zeros(len(t))
        for label in LABELS:
            mask = labels == label
            if not mask.any():
                continue
            if label not in pcfg.sources:
                raise ConfigError(f"[personal] no source.{label} for a scheduled microenvironment")
            src, scale = pcfg.sources[label]
            if src not in truth:
                raise ConfigError(f"[personal] source.{label}: unknown site {src!r}")
            personal_truth[mask] = scale * truth[src][mask]
        nodes[pcfg.node] = NodeData("personal", t, measure(personal_truth), personal_truth)

        fences = {f.label: f for f in cfg.fences}
        lat = np.empty(len(t))
        lon = np.empty(len(t))
        sigma = sc.gps_jitter_m / 2.0
        for label in LABELS:
            mask = labels == label
            if label == OTHER or label not in fences:
                if label != OTHER:
                    raise ConfigError(f"[personal] schedule uses {label!r} but no geofence is defined")
                c_lat, c_lon = sc.other_lat, sc.other_lon
            else:
                c_lat, c_lon = fences[label].lat, fences[label].lon
            la, lo = _jitter(rng, c_lat, c_lon, sigma, int(mask.sum()))
            lat[mask], lon[mask] = la, lo
        valid = rng.random(len(t)) >= sc.gps_dropout
        fixes = (t, np.round(lat, 7), np.round(lon, 7), valid)

    reference = []
    hk, hv = _hourly_means(t, c_out)
    for monitor in sc.reference_monitors:
        noise = rng.normal(0.0, sc.reference_noise, len(hk)) if sc.reference_noise > 0 else np.zeros(len(hk))
        for start, v in zip(hk.tolist(), np.maximum(hv + noise, 0.0).tolist()):
            reference.append((start, monitor, v))
    reference.sort()

    gt: dict = {
        "seed": sc.seed if seed is None else seed,
        "calibration": {"beta1": 1.0 / sc.sensor_gain, "beta0": -sc.sensor_offset / sc.sensor_gain},
        "sites": {},
    }
    _, out_h = _hourly_means(t, c_out)
    for loc, site in cfg.sites.items():
        d = site.dynamics
        _, in_h = _hourly_means(t, truth[loc])
        entry = {
            "hepa": site.meta.hepa,
            "io_steady_state": steady_state(1.0, d.penetration, d.air_exchange, d.k_extra),
            "io_median_hourly": float(np.median(in_h / out_h)),
            "reduction_pct": float((c_out.mean() - truth[loc].mean()) / c_out.mean() * 100.0),
        }
        if d.hvac_on and d.hvac_k > 0:
            entry["io_steady_state_hvac_on"] = steady_state(
                1.0, d.penetration, d.air_exchange, d.k_extra + d.hvac_k)
        gt["sites"][loc] = entry
    if personal_truth is not None:
        gt["personal"] = _true_attribution(t, personal_truth, labels, offset_s)

    return EpisodeDataset(nodes, fixes, reference, gt, cfg.text, labels)


def _fmt(v: float) -> str:
    return repr(float(v))


def write_episode(ds: EpisodeDataset, out: str | Path, binary: bool = False,
                  personal_node: str = "") -> dict[str, Path]:
    """Write samples.csv, reference.csv, study.cfg and ground_truth.json."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "samples": out / "samples.csv",
        "reference": out / "reference.csv",
        "config": out / "study.cfg",
        "ground_truth": out / "ground_truth.json",
    }
    iso_cache: dict[int, str] = {}

    def stamp(x: int) -> str:
        s = iso_cache.get(x)
        if s is None:
            s = iso_cache[x] = iso(x)
        return s

    fix_by_t = {}
    if ds.fixes is not None:
        ft, flat, flon, fvalid = ds.fixes
        fix_by_t = {int(a): (b, c, bool(d)) for a, b, c, d in zip(ft.tolist(), flat.tolist(),
                                                                    flon.tolist(), fvalid.tolist())}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for node in sorted(ds.nodes):
        nd = ds.nodes[node]
        personal = nd.location_class == "personal"
        for ti, v in zip(nd.t.tolist(), nd.pm25.tolist()):
            lat = lon = valid = ""
            if personal and ti in fix_by_t:
                la, lo, ok = fix_by_t[ti]
                valid = "1" if ok else "0"
                if ok:
                    lat, lon = _fmt(la), _fmt(lo)
            w.writerow((stamp(ti), node, nd.location_class, _fmt(v), "", lat, lon, valid, "", ""))
    paths["samples"].write_text(buf.getvalue())

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REFERENCE_COLUMNS)
    for ti, monitor, v in ds.reference:
        w.writerow((stamp(ti), monitor, _fmt(v)))
    paths["reference"].write_text(buf.getvalue())
    paths["config"].write_text(ds.config_text)
    paths["ground_truth"].write_text(json.dumps(ds.ground_truth, indent=2, sort_keys=True) + "\n")

    if binary:
        raw = out / "raw"
        raw.mkdir(exist_ok=True)
        for node in sorted(ds.nodes):
            nd = ds.nodes[node]
            frames = bytearray()
            for v in nd.pm25.tolist():
                frames += encode_frame(synthetic_frame(v))
            p = raw / f"{_safe(node)}.pms"
            p.write_bytes(bytes(frames))
            paths[f"pms:{node}"] = p
        if ds.fixes is not None:
            node = personal_node or next(n for n, d in ds.nodes.items() if d.location_class == "personal")
            lines = []
            ft, flat, flon, fvalid = ds.fixes
            for ti, la, lo, ok in zip(ft.tolist(), flat.tolist(), flon.tolist(), fvalid.tolist()):
                when = datetime.fromtimestamp(ti, tz=timezone.utc)
                fix = GpsFix(when, la if ok else None, lo if ok else None, bool(ok))
                lines.append(format_rmc(fix))
            p = raw / f"{_safe(node)}.nmea"
            p.write_text("\r\n".join(lines) + "\r\n")
            paths[f"nmea:{node}"] = p
    return paths


def _safe(node: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in node)


def synthetic_frame(pm25: float) -> SensorFrame:
    """A plausible PMS frame for a given atmospheric PM2.5 value."""
    v = min(int(round(pm25)), 0xFFFF // 2)
    pm1 = int(round(v * 0.7))
    pm10 = min(int(round(v * 1.15)), 0xFFFF)
    c03 = min(v * 150, 0xFFFF)
    counts = (c03, c03 * 3 // 10, c03 // 20, c03 // 200, c03 // 1000, c03 // 4000)
    return SensorFrame(pm1, v, pm10, pm1, v, pm10, counts, 0x9700)
