"""Per-node sample storage, block aggregation with coverage, and stream alignment.

Timestamps are integer seconds since the Unix epoch, UTC.  Aggregation
windows are aligned to multiples of the window length from the epoch, so an
hourly window always starts on the hour (UTC).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np

from .wire import GpsFix

RAW = 0
TEN_MIN = 600
HOUR = 3600
DAY = 86400

LOCATION_CLASSES = ("indoor", "outdoor", "personal", "reference")


@dataclass(frozen=True)
class Sample:
    timestamp: int
    node_id: str
    location_class: str
    pm25: float
    pm25_std: float | None = None
    fix: GpsFix | None = None
    env: dict | None = None

    def __post_init__(self):
        if self.location_class not in LOCATION_CLASSES:
            raise ValueError(f"unknown location class {self.location_class!r}")
        if not self.pm25 >= 0:
            raise ValueError(f"negative or missing pm25 {self.pm25!r}")


@dataclass(frozen=True)
class SiteMetadata:
    location_id: str
    building_type: str = ""
    size_sqft: float | None = None
    hvac: bool = False
    hepa: bool = False
    window_opening: str = ""
    indoor_sources: str = ""
    indoor_node: str = ""
    outdoor_node: str = ""


@dataclass
class TimeSeries:
    """Windowed PM2.5 means for one node.

    ``window`` is the window length in seconds; 0 marks raw samples, which
    carry ``n_samples == 1`` and full coverage.
    """

    node_id: str
    window: int
    start: np.ndarray
    mean: np.ndarray
    coverage: np.ndarray
    n_samples: np.ndarray
    valid: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)
        self.mean = np.asarray(self.mean, dtype=float)
        self.coverage = np.asarray(self.coverage, dtype=float)
        self.n_samples = np.asarray(self.n_samples, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=bool)
        k = len(self.start)
        if not all(len(a) == k for a in (self.mean, self.coverage, self.n_samples, self.valid)):
            raise ValueError("TimeSeries columns differ in length")

    def __len__(self):
        return len(self.start)

    @classmethod
    def empty(cls, node_id: str, window: int) -> "TimeSeries":
        z = np.zeros(0)
        return cls(node_id, window, z, z, z, z, z)

    @classmethod
    def raw(cls, node_id: str, timestamps, values) -> "TimeSeries":
        t = np.asarray(timestamps, dtype=np.int64)
        v = np.asarray(values, dtype=float)
        order = np.argsort(t, kind="stable")
        k = len(t)
        return cls(node_id, RAW, t[order], v[order], np.ones(k), np.ones(k, dtype=np.int64),
                   np.ones(k, dtype=bool))

    def only_valid(self) -> "TimeSeries":
        m = self.valid
        return replace(self, start=self.start[m], mean=self.mean[m], coverage=self.coverage[m],
                       n_samples=self.n_samples[m], valid=self.valid[m], meta=dict(self.meta))

    def between(self, t0: int | None = None, t1: int | None = None) -> "TimeSeries":
        """Windows whose start lies in ``[t0, t1)``."""
        m = np.ones(len(self), dtype=bool)
        if t0 is not None:
            m &= self.start >= t0
        if t1 is not None:
            m &= self.start < t1
        return replace(self, start=self.start[m], mean=self.mean[m], coverage=self.coverage[m],
                       n_samples=self.n_samples[m], valid=self.valid[m], meta=dict(self.meta))

    def with_means(self, mean) -> "TimeSeries":
        return replace(self, mean=np.asarray(mean, dtype=float), meta=dict(self.meta))

    def as_dict(self) -> dict[int, float]:
        """Valid windows as ``{window_start: mean}``."""
        return {int(t): float(v) for t, v, ok in zip(self.start, self.mean, self.valid) if ok}


def samples_to_series(samples: Iterable[Sample]) -> dict[str, TimeSeries]:
    """Group samples by node into raw series (sorted on load)."""
    by_node: dict[str, tuple[list, list]] = {}
    for s in samples:
        ts, vs = by_node.setdefault(s.node_id, ([], []))
        ts.append(s.timestamp)
        vs.append(s.pm25)
    return {node: TimeSeries.raw(node, ts, vs) for node, (ts, vs) in sorted(by_node.items())}


def aggregate(series: TimeSeries, window: int, min_coverage: float = 0.75,
              sample_period: float = 10.0) -> TimeSeries:
    """Block-average raw samples into aligned windows.

    Windows with at least one sample are emitted.  Coverage is the sample
    count over the nominal count ``window / sample_period``; windows below
    ``min_coverage`` are kept but flagged invalid.  The result does not depend
    on the order of the input samples.
    """
    if window <= 0:
        raise ValueError("window must be positive")
    if len(series) == 0:
        return TimeSeries.empty(series.node_id, window)
    if series.window != RAW:
        return reaggregate(series, window, min_coverage, sample_period)
    keys = (series.start // window) * window
    # sorting on (key, value) makes the float sums independent of input order
    order = np.lexsort((series.mean, keys))
    k = keys[order]
    v = series.mean[order]
    cuts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    counts = np.diff(np.r_[cuts, len(k)])
    mean = np.add.reduceat(v, cuts) / counts
    mean = np.clip(mean, np.minimum.reduceat(v, cuts), np.maximum.reduceat(v, cuts))
    coverage = counts / (window / sample_period)
    return TimeSeries(series.node_id, window, k[cuts], mean, coverage, counts,
                      coverage >= min_coverage, dict(series.meta))


def reaggregate(series: TimeSeries, window: int, min_coverage: float = 0.75,
                sample_period: float = 10.0) -> TimeSeries:
    """Combine already-aggregated windows into longer ones, weighting by sample count.

    Invalid input windows are ignored entirely.  Equivalent to aggregating the
    underlying raw samples when every input window was valid.
    """
    if series.window and window % series.window:
        raise ValueError("target window must be a multiple of the source window")
    s = series.only_valid()
    if len(s) == 0:
        return TimeSeries.empty(series.node_id, window)
    keys = (s.start // window) * window
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    w = s.n_samples[order]
    sums = s.mean[order] * w
    cuts = np.flatnonzero(np.r_[True, k[1:] != k[:-1]])
    counts = np.add.reduceat(w, cuts)
    mean = np.add.reduceat(sums, cuts) / counts
    coverage = counts / (window / sample_period)
    return TimeSeries(series.node_id, window, k[cuts], mean, coverage, counts,
                      coverage >= min_coverage, dict(series.meta))


def align_pairs(a: TimeSeries, b: TimeSeries) -> tuple[list[tuple[int, float, float]], int]:
    """Inner join of the valid windows of two series on window start.

    Returns the sorted ``(window_start, a_mean, b_mean)`` triples and the
    number of valid windows present in only one of the inputs.
    """
    if a.window != b.window:
        raise ValueError(f"window length mismatch: {a.window} vs {b.window}")
    da, db = a.as_dict(), b.as_dict()
    common = sorted(da.keys() & db.keys())
    dropped = len(da) + len(db) - 2 * len(common)
    return [(t, da[t], db[t]) for t in common], dropped


def reference_mean(refs: Sequence[TimeSeries], min_monitors: int = 1,
                   node_id: str = "reference") -> TimeSeries:
    """Per-window mean across reference monitors.

    ``n_samples`` holds the number of monitors reporting; windows with fewer
    than ``min_monitors`` are flagged invalid.
    """
    if not refs:
        raise ValueError("reference_mean needs at least one monitor")
    window = refs[0].window
    if any(r.window != window for r in refs):
        raise ValueError("reference monitors must share one window length")
    values: dict[int, list[float]] = {}
    for r in refs:
        for t, v in r.as_dict().items():
            values.setdefault(t, []).append(v)
    if not values:
        return TimeSeries.empty(node_id, window)
    starts = sorted(values)
    n = np.array([len(values[t]) for t in starts])
    mean = np.array([sum(values[t]) / len(values[t]) for t in starts])
    return TimeSeries(node_id, window, starts, mean, n / len(refs), n, n >= min_monitors)


def to_epoch(ts: datetime | str) -> int:
    if isinstance(ts, str):
        ts = parse_iso(ts)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return int(round(ts.timestamp()))


def parse_iso(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def iso(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
