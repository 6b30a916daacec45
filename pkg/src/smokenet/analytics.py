"""Indoor/outdoor ratios, PM2.5 reduction, network averages and paired tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .timeseries import TimeSeries, align_pairs

# Largest number of nonzero differences for which the exact null
# distribution is used.
EXACT_MAX_N = 20


def summary(values) -> dict[str, float | None]:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return {"min": None, "median": None, "mean": None, "max": None}
    return {
        "min": float(v[0]),
        "median": float(np.median(v)),
        "mean": float(v.mean()),
        "max": float(v[-1]),
    }


@dataclass
class IoRatioSeries:
    location_id: str
    start: np.ndarray
    ratio: np.ndarray
    skipped: int = 0
    dropped: int = 0

    @property
    def summary(self) -> dict[str, float | None]:
        return summary(self.ratio)


def io_ratio(indoor: TimeSeries, outdoor: TimeSeries, location_id: str = "") -> IoRatioSeries:
    """Hourly indoor/outdoor ratio over the aligned valid windows.

    Hours whose outdoor mean is not positive are skipped and counted.
    """
    pairs, dropped = align_pairs(indoor, outdoor)
    keep = [(t, i / o) for t, i, o in pairs if o > 0]
    start = np.array([t for t, _ in keep], dtype=np.int64)
    ratio = np.array([r for _, r in keep], dtype=float)
    return IoRatioSeries(location_id or indoor.node_id, start, ratio,
                         skipped=len(pairs) - len(keep), dropped=dropped)


def reduction_percent(outdoor_mean: float | None, indoor_mean: float | None) -> float | None:
    """(O - I) / O as a percentage; None when O is not positive."""
    if outdoor_mean is None or indoor_mean is None or not outdoor_mean > 0:
        return None
    return (outdoor_mean - indoor_mean) / outdoor_mean * 100.0


def valid_mean(series: TimeSeries, t0: int | None = None, t1: int | None = None) -> float | None:
    s = series.between(t0, t1).only_valid()
    return float(s.mean.mean()) if len(s) else None


def pm_reduction(indoor: TimeSeries, outdoor: TimeSeries,
                 t0: int | None = None, t1: int | None = None) -> float | None:
    """Reduction from each series' own valid-window mean inside ``[t0, t1)``."""
    return reduction_percent(valid_mean(outdoor, t0, t1), valid_mean(indoor, t0, t1))


@dataclass
class NetworkAverage:
    start: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray  # nan where only one sensor reported
    n: np.ndarray


def network_average(series: Sequence[TimeSeries]) -> NetworkAverage:
    """Per-window cross-sensor mean and sample standard deviation (n-1)."""
    by_t: dict[int, list[float]] = {}
    for s in series:
        for t, v in s.as_dict().items():
            by_t.setdefault(t, []).append(v)
    starts = sorted(by_t)
    mean, sigma, n = [], [], []
    for t in starts:
        v = np.array(by_t[t])
        mean.append(v.mean())
        sigma.append(v.std(ddof=1) if v.size > 1 else math.nan)
        n.append(v.size)
    return NetworkAverage(np.array(starts, dtype=np.int64), np.array(mean), np.array(sigma),
                          np.array(n, dtype=np.int64))


def pearson(x, y) -> float | None:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        return None
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def correlation(a: TimeSeries, b: TimeSeries) -> float | None:
    pairs, _ = align_pairs(a, b)
    if not pairs:
        return None
    _, x, y = zip(*pairs)
    return pearson(x, y)


# ------------------------------------------------------------------ Wilcoxon

@dataclass
class WilcoxonResult:
    n_nonzero: int
    w_plus: float
    w_minus: float
    statistic: float
    p_value: float
    method: str
    degenerate: bool = False
    n_zero: int = 0
    exact_p: Fraction | None = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "n_nonzero": self.n_nonzero,
            "n_zero": self.n_zero,
            "w_plus": self.w_plus,
            "w_minus": self.w_minus,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method,
            "degenerate": self.degenerate,
        }


def doubled_midranks(values) -> list[int]:
    """Twice the 1-based midranks of ``values`` (integers even with ties)."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        # 0-based positions i..j share rank ((i+1) + (j+1)) / 2
        for p in range(i, j + 1):
            ranks[order[p]] = i + j + 2
        i = j + 1
    return ranks


def _null_counts(ranks2: Sequence[int]) -> list[int]:
    """Number of sign assignments giving each doubled positive-rank sum."""
    total = sum(ranks2)
    counts = [0] * (total + 1)
    counts[0] = 1
    reach = 0
    for r in ranks2:
        for s in range(reach, -1, -1):
            if counts[s]:
                counts[s + r] += counts[s]
        reach += r
    return counts


def wilcoxon_signed_rank(pairs, exact_max: int = EXACT_MAX_N) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on paired ``(x, y)`` values.

    Zero differences are dropped (Wilcoxon's method) and tied ``|d|`` get
    midranks.  Up to ``exact_max`` nonzero differences the p-value comes from
    the exact permutation distribution of the given ranks; above that, the
    normal approximation with tie-corrected variance and a 0.5 continuity
    correction is used.
    """
    d = [float(x) - float(y) for x, y in pairs]
    nz = [v for v in d if v != 0.0]
    n = len(nz)
    if n == 0:
        return WilcoxonResult(0, 0.0, 0.0, 0.0, 1.0, "degenerate", True, len(d), Fraction(1))
    ranks2 = doubled_midranks([abs(v) for v in nz])
    wp2 = sum(r for r, v in zip(ranks2, nz) if v > 0)
    total2 = sum(ranks2)
    wm2 = total2 - wp2
    w2 = min(wp2, wm2)
    res = WilcoxonResult(n, wp2 / 2, wm2 / 2, w2 / 2, 1.0, "exact", n_zero=len(d) - n)
    if n <= exact_max:
        counts = _null_counts(ranks2)
        tail = sum(counts[: w2 + 1])
        p = min(Fraction(1), Fraction(2 * tail, 2 ** n))
        res.exact_p = p
        res.p_value = float(p)
        return res
    _, tie_sizes = np.unique(np.abs(nz), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    mu = n * (n + 1) / 4.0
    res.method = "normal_approx"
    if var <= 0:
        res.p_value = 1.0
        return res
    z = max(abs(wp2 / 2 - mu) - 0.5, 0.0) / math.sqrt(var)
    res.p_value = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return res


# --------------------------------------------------------------- site table

TABLE2_COLUMNS = (
    "location_id", "hepa", "indoor_mean", "indoor_max", "outdoor_mean", "outdoor_max",
    "io_min", "io_median", "io_mean", "io_max", "reduction_pct", "io_hours",
)


@dataclass
class SiteRow:
    location_id: str
    hepa: bool | None = None
    indoor_mean: float | None = None
    indoor_max: float | None = None
    outdoor_mean: float | None = None
    outdoor_max: float | None = None
    io_min: float | None = None
    io_median: float | None = None
    io_mean: float | None = None
    io_max: float | None = None
    reduction_pct: float | None = None
    io_hours: int = 0

    def as_row(self) -> list:
        return [getattr(self, c) for c in TABLE2_COLUMNS]


def _mean_max(series: TimeSeries | None, t0, t1):
    if series is None:
        return None, None
    s = series.between(t0, t1).only_valid()
    if not len(s):
        return None, None
    return float(s.mean.mean()), float(s.mean.max())


def site_row(location_id: str, indoor: TimeSeries | None, outdoor: TimeSeries | None,
             t0: int | None = None, t1: int | None = None, hepa: bool | None = None) -> SiteRow:
    """One row of the per-site summary table.

    Means and maxima use each stream's own valid windows; the I/O summary
    uses only hours present in both.  A missing stream leaves its cells empty.
    """
    row = SiteRow(location_id, hepa)
    row.indoor_mean, row.indoor_max = _mean_max(indoor, t0, t1)
    row.outdoor_mean, row.outdoor_max = _mean_max(outdoor, t0, t1)
    if indoor is not None and outdoor is not None:
        io = io_ratio(indoor.between(t0, t1), outdoor.between(t0, t1), location_id)
        s = io.summary
        row.io_min, row.io_median, row.io_mean, row.io_max = s["min"], s["median"], s["mean"], s["max"]
        row.io_hours = len(io.ratio)
    row.reduction_pct = reduction_percent(row.outdoor_mean, row.indoor_mean)
    return row


def summarize_table(sites: Mapping[str, tuple[TimeSeries | None, TimeSeries | None]],
                    t0: int | None = None, t1: int | None = None,
                    hepa: Mapping[str, bool] | None = None) -> list[SiteRow]:
    """Rows for every site, keyed ``location_id -> (indoor, outdoor)``."""
    hepa = hepa or {}
    return [site_row(loc, ind, out, t0, t1, hepa.get(loc)) for loc, (ind, out) in sites.items()]
