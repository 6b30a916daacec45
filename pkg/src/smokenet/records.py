"""CSV readers and writers for the stage files.

Sample CSV::

    timestamp_utc,node_id,location_class,pm25_atm,pm25_std,lat,lon,gps_valid,temp_c,rh_pct

Reference CSV::

    timestamp_utc,monitor_id,pm25

Window CSV (written by ``ingest`` and later stages)::

    node_id,window_start,window_s,mean_pm25,coverage,n_samples,valid
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InputFormatError
from .timeseries import HOUR, LOCATION_CLASSES, TimeSeries, iso, to_epoch

SAMPLE_COLUMNS = ("timestamp_utc", "node_id", "location_class", "pm25_atm", "pm25_std",
                  "lat", "lon", "gps_valid", "temp_c", "rh_pct")
REFERENCE_COLUMNS = ("timestamp_utc", "monitor_id", "pm25")
WINDOW_COLUMNS = ("node_id", "window_start", "window_s", "mean_pm25", "coverage", "n_samples", "valid")
GPS_COLUMNS = ("timestamp_utc", "node_id", "lat", "lon", "valid")


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v != v:
        return ""
    return repr(v)


def write_csv(path: Path, header: Iterable[str], rows: Iterable[Iterable]) -> int:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    n = 0
    for r in rows:
        w.writerow([fmt(x) if not isinstance(x, str) else x for x in r])
        n += 1
    Path(path).write_text(buf.getvalue())
    return n


def _reader(path: Path, columns: tuple[str, ...], stage: str):
    try:
        f = open(path, newline="")
    except OSError as exc:
        raise InputFormatError(f"cannot open: {exc.strerror}", stage, str(path)) from None
    r = csv.reader(f)
    header = next(r, None)
    if header is None or tuple(h.strip() for h in header[:len(columns)]) != columns:
        f.close()
        raise InputFormatError(f"expected header {','.join(columns)}", stage, str(path), "row 1")
    return f, r


@dataclass
class NodeSamples:
    location_class: str
    t: list = field(default_factory=list)
    pm25: list = field(default_factory=list)


@dataclass
class SampleTable:
    nodes: dict[str, NodeSamples]
    fixes: list[tuple[int, str, float | None, float | None, bool]]
    rows: int


_ISO_CACHE: dict[str, int] = {}


def _epoch(text: str) -> int:
    t = _ISO_CACHE.get(text)
    if t is None:
        t = to_epoch(text)
        if len(_ISO_CACHE) < 2_000_000:
            _ISO_CACHE[text] = t
    return t


def read_samples(path: Path, stage: str = "ingest") -> SampleTable:
    """Load a sample CSV; any malformed row halts with its row number."""
    f, r = _reader(path, SAMPLE_COLUMNS, stage)
    nodes: dict[str, NodeSamples] = {}
    fixes = []
    n = 0
    with f:
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                ts, node, cls, atm = row[0], row[1], row[2], row[3]
                t = _epoch(ts)
                pm = float(atm)
                if not pm >= 0:
                    raise ValueError(f"pm25_atm must be non-negative, got {atm!r}")
                if cls not in LOCATION_CLASSES:
                    raise ValueError(f"unknown location_class {cls!r}")
                lat_s, lon_s, valid_s = row[5], row[6], row[7]
            except (ValueError, IndexError) as exc:
                raise InputFormatError(str(exc), stage, str(path), f"row {lineno}") from None
            ns = nodes.get(node)
            if ns is None:
                ns = nodes[node] = NodeSamples(cls)
            elif ns.location_class != cls:
                raise InputFormatError(f"node {node!r} changes location class", stage, str(path),
                                       f"row {lineno}")
            ns.t.append(t)
            ns.pm25.append(pm)
            if valid_s != "":
                try:
                    ok = valid_s.strip() == "1"
                    lat = float(lat_s) if lat_s else None
                    lon = float(lon_s) if lon_s else None
                    if ok and (lat is None or lon is None or not -90 <= lat <= 90 or not -180 <= lon <= 180):
                        raise ValueError("valid fix without an in-range position")
                except ValueError as exc:
                    raise InputFormatError(str(exc), stage, str(path), f"row {lineno}") from None
                fixes.append((t, node, lat, lon, ok))
            n += 1
    return SampleTable(nodes, fixes, n)


def read_reference(path: Path, stage: str = "ingest") -> dict[str, TimeSeries]:
    """Hourly reference values per monitor, as one-sample hourly windows."""
    f, r = _reader(path, REFERENCE_COLUMNS, stage)
    by_monitor: dict[str, dict[int, float]] = {}
    with f:
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                t = _epoch(row[0])
                v = float(row[2])
                if t % HOUR:
                    raise ValueError(f"reference timestamp {row[0]} is not on the hour")
                if not v >= 0:
                    raise ValueError(f"negative reference value {row[2]!r}")
            except (ValueError, IndexError) as exc:
                raise InputFormatError(str(exc), stage, str(path), f"row {lineno}") from None
            by_monitor.setdefault(row[1], {})[t] = v
    out = {}
    for monitor, d in sorted(by_monitor.items()):
        ts = sorted(d)
        k = len(ts)
        out[monitor] = TimeSeries(monitor, HOUR, ts, [d[t] for t in ts], np.ones(k),
                                  np.ones(k, dtype=np.int64), np.ones(k, dtype=bool))
    return out


def window_rows(series: Iterable[TimeSeries]):
    for s in series:
        for t, m, c, n, ok in zip(s.start.tolist(), s.mean.tolist(), s.coverage.tolist(),
                                  s.n_samples.tolist(), s.valid.tolist()):
            yield (s.node_id, iso(t), s.window, m, c, n, ok)


def write_windows(path: Path, series: Iterable[TimeSeries]) -> int:
    return write_csv(path, WINDOW_COLUMNS, window_rows(series))


def read_windows(path: Path, stage: str = "") -> dict[str, TimeSeries]:
    f, r = _reader(path, WINDOW_COLUMNS, stage)
    cols: dict[str, list] = {}
    window: dict[str, int] = {}
    with f:
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                node = row[0]
                rec = (_epoch(row[1]), float(row[3]), float(row[4]), int(row[5]), row[6] == "1")
                w = int(row[2])
            except (ValueError, IndexError) as exc:
                raise InputFormatError(str(exc), stage, str(path), f"row {lineno}") from None
            if window.setdefault(node, w) != w:
                raise InputFormatError(f"node {node!r} mixes window lengths", stage, str(path),
                                       f"row {lineno}")
            cols.setdefault(node, []).append(rec)
    out = {}
    for node, recs in cols.items():
        recs.sort()
        t, m, c, n, ok = zip(*recs)
        out[node] = TimeSeries(node, window[node], t, m, c, n, ok)
    return out


def read_gps(path: Path, stage: str = "") -> list[tuple[int, str, float | None, float | None, bool]]:
    f, r = _reader(path, GPS_COLUMNS, stage)
    out = []
    with f:
        for lineno, row in enumerate(r, start=2):
            if not row:
                continue
            try:
                ok = row[4] == "1"
                lat = float(row[2]) if row[2] else None
                lon = float(row[3]) if row[3] else None
                out.append((_epoch(row[0]), row[1], lat, lon, ok))
            except (ValueError, IndexError) as exc:
                raise InputFormatError(str(exc), stage, str(path), f"row {lineno}") from None
    return out


def count_rows(path: Path) -> int:
    with open(path, newline="") as f:
        return max(sum(1 for _ in f) - 1, 0)
