"""Linear/quadratic correction of sensor PM2.5 against reference monitors.

Four candidate forms are fitted by ordinary least squares::

    linear/zero       ref = b1*pms
    linear/free       ref = b0 + b1*pms
    quadratic/zero    ref = b1*pms + b2*pms**2
    quadratic/free    ref = b0 + b1*pms + b2*pms**2

and the one with the lowest BIC (Gaussian likelihood form) wins.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .timeseries import TimeSeries


class CalibrationError(Exception):
    """Raised for degenerate training data or a failed model selection."""


FORMS = ("linear/zero", "linear/free", "quadratic/zero", "quadratic/free")

# RSS floor per pair, keeps the BIC finite on exact fits
RSS_FLOOR = 1e-12


def n_coefficients(form: str) -> int:
    degree, intercept = _split(form)
    return degree + (intercept == "free")


def _split(form: str) -> tuple[int, str]:
    if form not in FORMS:
        raise ValueError(f"unknown model form {form!r}; expected one of {FORMS}")
    kind, intercept = form.split("/")
    return (1 if kind == "linear" else 2), intercept


@dataclass
class CalibrationModel:
    form: str
    beta0: float = 0.0
    beta1: float = 1.0
    beta2: float | None = None
    n: int = 0
    rss: float | None = None
    r2: float | None = None
    rmse: float | None = None
    bic: float | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        degree, intercept = _split(self.form)
        if (degree == 2) != (self.beta2 is not None):
            raise ValueError(f"beta2 must be given iff the form is quadratic ({self.form})")
        if intercept == "zero" and self.beta0 != 0.0:
            raise ValueError("zero-intercept model with nonzero beta0")

    @property
    def k(self) -> int:
        return n_coefficients(self.form)

    def predict(self, pms) -> np.ndarray:
        x = np.asarray(pms, dtype=float)
        y = self.beta0 + self.beta1 * x
        if self.beta2 is not None:
            y = y + self.beta2 * x * x
        return y

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "CalibrationModel":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in keys})


IDENTITY = CalibrationModel("linear/free", 0.0, 1.0)


def _xy(pairs) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return a[:, 0], a[:, 1]


def design(x: np.ndarray, form: str) -> tuple[np.ndarray, list[str]]:
    degree, intercept = _split(form)
    cols, names = [], []
    if intercept == "free":
        cols.append(np.ones_like(x))
        names.append("1")
    cols.append(x)
    names.append("pms")
    if degree == 2:
        cols.append(x * x)
        names.append("pms^2")
    return np.column_stack(cols), names


def fit(pairs: Sequence[tuple[float, float]], form: str) -> CalibrationModel:
    """OLS fit of one form to ``(pms, ref)`` pairs, with training-set metrics."""
    x, y = _xy(pairs)
    n = len(x)
    k = n_coefficients(form)
    if n < k + 2:
        raise CalibrationError(f"{form}: need at least {k + 2} pairs, got {n}")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise CalibrationError(f"{form}: non-finite training values")
    X, names = design(x, form)
    # an unvarying pms column carries no slope information in any form
    if np.unique(x).size < 2:
        raise CalibrationError(f"{form}: degenerate column 'pms' (all {n} values equal)")
    rank = np.linalg.matrix_rank(X)
    if rank < X.shape[1]:
        raise CalibrationError(f"{form}: rank-deficient design, degenerate column '{names[-1]}'")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    coef = list(map(float, coef))
    degree, intercept = _split(form)
    b0 = coef.pop(0) if intercept == "free" else 0.0
    b1 = coef.pop(0)
    b2 = coef.pop(0) if degree == 2 else None
    model = CalibrationModel(form, b0, b1, b2, n=n)
    m = metrics(model, pairs)
    model.rss = m["rss"]
    model.r2 = m["r2"]
    model.rmse = m["rmse"]
    model.bic = bic(model, pairs)
    return model


def metrics(model: CalibrationModel, pairs) -> dict:
    """RSS, RMSE and coefficient of determination of ``model`` on ``pairs``.

    ``r2`` is None when the reference is constant.
    """
    x, y = _xy(pairs)
    resid = y - model.predict(x)
    rss = float(np.dot(resid, resid))
    n = len(y)
    dev = y - y.mean() if n else y
    tss = float(np.dot(dev, dev))
    return {
        "rss": rss,
        "rmse": math.sqrt(rss / n) if n else None,
        "r2": 1.0 - rss / tss if tss > 0 else None,
        "n": n,
    }


def bic_score(rss: float, n: int, k: int) -> float:
    return n * math.log(max(rss, RSS_FLOOR * n) / n) + k * math.log(n)


def bic(model: CalibrationModel, pairs) -> float:
    x, y = _xy(pairs)
    resid = y - model.predict(x)
    return bic_score(float(np.dot(resid, resid)), len(y), model.k)


def fit_all(pairs) -> dict[str, CalibrationModel | CalibrationError]:
    """Every candidate form, or the error that stopped it."""
    out: dict[str, CalibrationModel | CalibrationError] = {}
    for form in FORMS:
        try:
            out[form] = fit(pairs, form)
        except CalibrationError as exc:
            out[form] = exc
    return out


def select_model(pairs) -> CalibrationModel:
    """Minimum-BIC model; ties go to fewer coefficients, then zero intercept."""
    # canonical order so the choice cannot depend on the order of the pairs
    pairs = sorted((float(p), float(r)) for p, r in pairs)
    fits = fit_all(pairs)
    ok = [m for m in fits.values() if isinstance(m, CalibrationModel)]
    if not ok:
        reasons = "; ".join(str(e) for e in fits.values())
        raise CalibrationError(f"no calibration form could be fitted: {reasons}")
    best = min(ok, key=lambda m: (m.bic, m.k, 0 if m.form.endswith("zero") else 1))
    best.info["candidates"] = {
        form: ({"bic": m.bic, "rmse": m.rmse, "r2": m.r2, "k": m.k}
               if isinstance(m, CalibrationModel) else {"error": str(m)})
        for form, m in fits.items()
    }
    return best


def apply(model: CalibrationModel, series: TimeSeries) -> TimeSeries:
    """Correct every window mean; negative predictions are clamped to zero.

    The number of clamped windows is stored in ``meta['clamped']``.
    """
    y = model.predict(series.mean)
    neg = y < 0
    out = series.with_means(np.where(neg, 0.0, y))
    out.meta["clamped"] = int(neg.sum())
    out.meta["calibrated"] = model.form
    return out


def save_model(model: CalibrationModel, path: str | Path, **extra) -> None:
    doc = {"model": model.to_json(), **extra}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> CalibrationModel:
    doc = json.loads(Path(path).read_text())
    return CalibrationModel.from_json(doc["model"])


def with_metrics(model: CalibrationModel, pairs) -> CalibrationModel:
    m = metrics(model, pairs)
    return replace(model, n=m["n"], rss=m["rss"], r2=m["r2"], rmse=m["rmse"], bic=bic(model, pairs))
