"""Geofence classification of personal GPS fixes and daily exposure attribution.

A day's attributable exposure for microenvironment ``k`` is the mean
concentration there weighted by the fraction of classified time spent there::

    AC_k = C_k * F_k / sum(F)

so the day's total, ``sum(AC_k)``, is the time-weighted mean personal
concentration over the classified windows.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

from .timeseries import TEN_MIN, TimeSeries
from .wire import GpsFix

EARTH_RADIUS_M = 6371008.8

HOME, OFFICE, OTHER = "home", "office", "other"
LABELS = (HOME, OFFICE, OTHER)
# overlapping fences resolve by label, never by list position
PRIORITY = {HOME: 0, OFFICE: 1, OTHER: 2}


def haversine(lat1: float, lon1: float, lat2: float, lon2: float,
              radius: float = EARTH_RADIUS_M) -> float:
    """Great-circle distance in metres."""
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * radius * math.asin(min(1.0, math.sqrt(a)))


@dataclass(frozen=True)
class Geofence:
    label: str
    lat: float
    lon: float
    radius_m: float = 10.0

    def __post_init__(self):
        if not self.radius_m > 0:
            raise ValueError(f"geofence {self.label!r}: radius must be positive")
        if self.label not in (HOME, OFFICE):
            raise ValueError(f"geofence label must be home or office, got {self.label!r}")

    def contains(self, lat: float, lon: float) -> bool:
        return haversine(self.lat, self.lon, lat, lon) <= self.radius_m


def check_fences(fences: Sequence[Geofence]) -> None:
    labels = [f.label for f in fences]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate geofence labels: {labels}")


def classify_point(lat: float, lon: float, fences: Sequence[Geofence]) -> str:
    inside = [f.label for f in fences if f.contains(lat, lon)]
    if not inside:
        return OTHER
    return min(inside, key=PRIORITY.__getitem__)


def classify_fix(fix: GpsFix, fences: Sequence[Geofence]) -> str | None:
    """Microenvironment of one fix; None for an invalid fix."""
    if not fix.valid or fix.latitude is None or fix.longitude is None:
        return None
    return classify_point(fix.latitude, fix.longitude, fences)


@dataclass
class LabeledSeries:
    node_id: str
    start: np.ndarray
    mean: np.ndarray
    labels: list[str | None]
    window: int = TEN_MIN
    carried: int = 0
    invalid_fixes: int = 0

    @property
    def unclassified(self) -> int:
        return sum(lab is None for lab in self.labels)


def _majority(labels: Iterable[str]) -> str:
    c = Counter(labels)
    return min(c, key=lambda lab: (-c[lab], PRIORITY.get(lab, 99)))


def label_series(series: TimeSeries, fixes: Sequence[GpsFix] | Sequence[tuple[int, float, float, bool]],
                 fences: Sequence[Geofence], carry_limit: int = 1800) -> LabeledSeries:
    """Label every valid window by the majority microenvironment of its fixes.

    ``fixes`` are :class:`GpsFix` objects or ``(epoch, lat, lon, valid)``
    tuples.  A window with no valid fix inherits the label of the most recent
    window that had fixes, provided that window started no more than
    ``carry_limit`` seconds earlier; otherwise it stays unclassified (None).
    Majority ties go to home, then office.
    """
    check_fences(fences)
    s = series.only_valid()
    w = s.window or TEN_MIN
    per_window: dict[int, list[str]] = {}
    invalid = 0
    for f in fixes:
        if isinstance(f, GpsFix):
            t = int(f.timestamp.timestamp())
            lab = classify_fix(f, fences)
        else:
            t, lat, lon, ok = f
            lab = classify_point(lat, lon, fences) if ok else None
        if lab is None:
            invalid += 1
            continue
        per_window.setdefault((int(t) // w) * w, []).append(lab)
    labels: list[str | None] = []
    last_t, last_lab = None, None
    carried = 0
    for t in s.start.tolist():
        got = per_window.get(t)
        if got:
            last_t, last_lab = t, _majority(got)
            labels.append(last_lab)
        elif last_t is not None and t - last_t <= carry_limit:
            labels.append(last_lab)
            carried += 1
        else:
            labels.append(None)
    return LabeledSeries(s.node_id, s.start, s.mean, labels, w, carried, invalid)


@dataclass
class DailyAttribution:
    day: date
    c: dict[str, float | None]
    f: dict[str, float]
    ac: dict[str, float]
    total: float
    n_classified: int
    n_unclassified: int = 0
    labels: tuple[str, ...] = field(default=LABELS)

    @property
    def unclassified_fraction(self) -> float:
        n = self.n_classified + self.n_unclassified
        return self.n_unclassified / n if n else 0.0


def local_day(epoch: int, utc_offset_hours: float) -> date:
    return (datetime.fromtimestamp(int(epoch), tz=timezone.utc)
            + timedelta(hours=utc_offset_hours)).date()


def _attribute(day: date, rows: Iterable[tuple[float, str | None]],
               labels: Sequence[str]) -> DailyAttribution | None:
    counts: dict[str, int] = {}
    sums: dict[str, float] = {}
    unclassified = 0
    for v, lab in rows:
        if lab is None:
            unclassified += 1
            continue
        counts[lab] = counts.get(lab, 0) + 1
        sums[lab] = sums.get(lab, 0.0) + v
    n = sum(counts.values())
    if n == 0:
        return None
    keys = list(labels) + sorted(set(counts) - set(labels))
    f = {k: counts.get(k, 0) / n for k in keys}
    c = {k: (sums[k] / counts[k] if counts.get(k) else None) for k in keys}
    fsum = sum(f.values())
    ac = {k: (c[k] * f[k] / fsum if f[k] > 0 else 0.0) for k in keys}
    return DailyAttribution(day, c, f, ac, sum(ac.values()), n, unclassified, tuple(keys))


def _by_day(labeled: LabeledSeries, utc_offset_hours: float) -> dict[date, list]:
    shift = int(round(utc_offset_hours * 3600))
    groups: dict[date, list] = {}
    for t, v, lab in zip(labeled.start.tolist(), labeled.mean.tolist(), labeled.labels):
        groups.setdefault((t + shift) // 86400, []).append((v, lab))
    return {date(1970, 1, 1) + timedelta(days=k): rows for k, rows in groups.items()}


def attribute_daily(labeled: LabeledSeries, day: date, utc_offset_hours: float = 0.0,
                    labels: Sequence[str] = LABELS) -> DailyAttribution | None:
    """Attributable exposure for one local calendar day; None if nothing was classified."""
    rows = _by_day(labeled, utc_offset_hours).get(day, [])
    return _attribute(day, rows, labels)


def attribute_days(labeled: LabeledSeries, utc_offset_hours: float = 0.0,
                   labels: Sequence[str] = LABELS) -> list[DailyAttribution]:
    out = []
    for d, rows in sorted(_by_day(labeled, utc_offset_hours).items()):
        a = _attribute(d, rows, labels)
        if a is not None:
            out.append(a)
    return out


def exposure_share(attributions: Sequence[DailyAttribution],
                   labels: Iterable[str]) -> tuple[float, float] | None:
    """Percent of total exposure and percent of time spent in ``labels``.

    Exposure share sums attributable exposure over days; time share is the
    mean daily time fraction weighted by each day's classified duration.
    """
    labels = set(labels)
    if not attributions:
        return None
    total = sum(a.total for a in attributions)
    if not total > 0:
        return None
    exposed = sum(a.ac.get(k, 0.0) for a in attributions for k in labels)
    weight = sum(a.n_classified for a in attributions)
    time = sum(a.n_classified * sum(a.f.get(k, 0.0) for k in labels) for a in attributions) / weight
    return exposed / total * 100.0, time * 100.0
