"""File-based pipeline stages: ingest -> calibrate -> analyze -> attribute -> report.

Every stage reads the previous stage's files from a directory and writes its
own, so any stage can be re-run alone.  ``run_pipeline`` chains them in a
staging directory and only publishes outputs when every stage succeeded.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import tempfile
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    TABLE2_COLUMNS, correlation, io_ratio, network_average, summarize_table, summary,
    wilcoxon_signed_rank,
)
from .calibration import (
    IDENTITY, CalibrationError, CalibrationModel, apply, load_model, metrics, save_model,
    select_model,
)
from .config import StudyConfig, in_band
from .errors import ConfigError, InputFormatError, NumericalError
from .exposure import LABELS, OFFICE, OTHER, attribute_days, exposure_share, label_series
from .records import (
    GPS_COLUMNS, count_rows, read_gps, read_reference, read_samples, read_windows, write_csv,
    write_windows,
)
from .timeseries import HOUR, TEN_MIN, TimeSeries, aggregate, align_pairs, iso, reference_mean

STAGE_VERSIONS = {
    "ingest": "1",
    "calibrate": "1",
    "analyze": "1",
    "attribute": "1",
    "report": "1",
}

REFERENCE_NODE = "reference"


def _json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _clean(v):
    if v is None:
        return None
    v = float(v)
    return None if v != v else v


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise InputFormatError("required input file is missing", stage, str(path))
    return path


# ------------------------------------------------------------------- ingest

def ingest(cfg: StudyConfig, samples_path: Path, reference_path: Path, out: Path) -> dict:
    """Validate raw samples, window them, and average the reference monitors."""
    out.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    table = read_samples(_need(Path(samples_path), "ingest"))
    registered = cfg.node_classes()
    counters = {"sample_rows": table.rows, "dropped_outside_window": 0}
    ten, hourly = [], []
    for node, ns in sorted(table.nodes.items()):
        if node not in registered:
            raise InputFormatError(f"node {node!r} is not registered in the site metadata",
                                   "ingest", str(samples_path))
        if registered[node] != ns.location_class:
            raise InputFormatError(
                f"node {node!r} is {ns.location_class!r} in the data but {registered[node]!r} in the config",
                "ingest", str(samples_path))
        t = np.asarray(ns.t, dtype=np.int64)
        v = np.asarray(ns.pm25, dtype=float)
        keep = (t >= run.study_start) & (t < run.study_end)
        counters["dropped_outside_window"] += int((~keep).sum())
        raw = TimeSeries.raw(node, t[keep], v[keep])
        ten.append(aggregate(raw, TEN_MIN, run.min_coverage, run.sample_period_s))
        hourly.append(aggregate(raw, HOUR, run.min_coverage, run.sample_period_s))
    counters["windows_10min"] = write_windows(out / "windows_10min.csv", ten)
    counters["windows_1h"] = write_windows(out / "windows_1h.csv", hourly)
    counters["invalid_windows_10min"] = int(sum((~s.valid).sum() for s in ten))
    counters["invalid_windows_1h"] = int(sum((~s.valid).sum() for s in hourly))

    monitors = read_reference(_need(Path(reference_path), "ingest"))
    if not monitors:
        raise InputFormatError("no reference monitor rows", "ingest", str(reference_path))
    monitors = {m: s.between(run.study_start, run.study_end) for m, s in monitors.items()}
    ref = reference_mean(list(monitors.values()), run.min_monitors, REFERENCE_NODE)
    write_windows(out / "reference_1h.csv", [ref, *monitors.values()])
    counters["reference_hours"] = len(ref)
    counters["reference_hours_flagged"] = int((~ref.valid).sum())

    fixes = [f for f in table.fixes if run.study_start <= f[0] < run.study_end]
    counters["gps_fixes"] = write_csv(out / "gps.csv", GPS_COLUMNS,
                                      ((iso(t), n, la, lo, ok) for t, n, la, lo, ok in sorted(fixes)))
    return counters


# ---------------------------------------------------------------- calibrate

def _calibration_pairs(cfg: StudyConfig, src: Path, stage: str):
    node = cfg.run.calibration_node
    if not node:
        raise ConfigError("[run] calibration_node is not set", stage)
    windows = read_windows(_need(src / "windows_1h.csv", stage), stage)
    refs = read_windows(_need(src / "reference_1h.csv", stage), stage)
    if node not in windows or not windows[node].valid.any():
        raise InputFormatError(f"no valid hourly data for calibration node {node!r}", stage,
                               str(src / "windows_1h.csv"))
    if REFERENCE_NODE not in refs:
        raise InputFormatError("reference mean series missing", stage, str(src / "reference_1h.csv"))
    return align_pairs(windows[node], refs[REFERENCE_NODE])


def calibrate(cfg: StudyConfig, src: Path, out: Path) -> dict:
    """Select the calibration model on the designated node and save it."""
    out.mkdir(parents=True, exist_ok=True)
    triples, dropped = _calibration_pairs(cfg, src, "calibrate")
    pairs = [(p, r) for _, p, r in triples]
    try:
        model = select_model(pairs)
    except CalibrationError as exc:
        raise NumericalError(str(exc), "calibrate", str(src / "windows_1h.csv")) from None
    pre = metrics(IDENTITY, pairs)
    post = metrics(model, pairs)
    save_model(model, out / "model.json",
               training_node=cfg.run.calibration_node,
               training_window={"first": iso(triples[0][0]), "last": iso(triples[-1][0])},
               pairs=len(pairs))
    report = {
        "training_node": cfg.run.calibration_node,
        "pairs": len(pairs),
        "dropped_unpaired_hours": dropped,
        "selected": model.form,
        "coefficients": {"beta0": model.beta0, "beta1": model.beta1, "beta2": model.beta2},
        "candidates": model.info.get("candidates", {}),
        "pre_calibration": {"rmse": pre["rmse"], "r2": pre["r2"]},
        "post_calibration": {"rmse": post["rmse"], "r2": post["r2"]},
    }
    _json(out / "fit_report.json", report)
    lines = [f"calibration node {cfg.run.calibration_node}, {len(pairs)} hourly pairs"]
    for form, c in report["candidates"].items():
        if "error" in c:
            lines.append(f"  {form:15s} failed: {c['error']}")
        else:
            lines.append(f"  {form:15s} BIC {c['bic']:10.3f}  RMSE {c['rmse']:8.3f}")
    lines.append(f"selected {model.form}: beta0={model.beta0:.4f} beta1={model.beta1:.4f}"
                 + (f" beta2={model.beta2:.6f}" if model.beta2 is not None else ""))
    lines.append(f"RMSE {pre['rmse']:.2f} -> {post['rmse']:.2f} ug/m3")
    (out / "fit_report.txt").write_text("\n".join(lines) + "\n")
    return {"calibration_pairs": len(pairs), "calibration_dropped_hours": dropped}


# ------------------------------------------------------------------ analyze

def _calibrated(cfg: StudyConfig, src: Path, name: str, stage: str,
                model_dir: Path | None = None) -> tuple[dict[str, TimeSeries], int, CalibrationModel]:
    model = load_model(_need((model_dir or src) / "model.json", stage))
    windows = read_windows(_need(src / name, stage), stage)
    out, clamped = {}, 0
    for node, s in windows.items():
        c = apply(model, s)
        clamped += c.meta["clamped"]
        out[node] = c
    return out, clamped, model


def _site_io_mean(indoor, outdoor, window) -> float | None:
    if indoor is None or outdoor is None or window is None:
        return None
    io = io_ratio(indoor.between(*window), outdoor.between(*window))
    return float(io.ratio.mean()) if len(io.ratio) else None


def analyze(cfg: StudyConfig, src: Path, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    cal, clamped, model = _calibrated(cfg, src, "windows_1h.csv", "analyze")
    cal = {n: s.between(run.study_start, run.study_end) for n, s in cal.items()}
    refs = read_windows(_need(src / "reference_1h.csv", "analyze"), "analyze")
    refs = {n: s.between(run.study_start, run.study_end) for n, s in refs.items()}
    write_windows(out / "calibrated_1h.csv", [cal[n] for n in sorted(cal)])

    sites = {loc: (cal.get(s.meta.indoor_node), cal.get(s.meta.outdoor_node))
             for loc, s in cfg.sites.items()}
    hepa = {loc: s.meta.hepa for loc, s in cfg.sites.items()}
    rows = summarize_table(sites, run.study_start, run.study_end, hepa)
    write_csv(out / "table2.csv", TABLE2_COLUMNS, (r.as_row() for r in rows))

    io_rows = []
    io_by_site = {}
    for loc, (ind, outd) in sites.items():
        if ind is None or outd is None:
            continue
        io = io_ratio(ind, outd, loc)
        io_by_site[loc] = io
        io_rows.extend((loc, iso(t), r) for t, r in zip(io.start.tolist(), io.ratio.tolist()))
    write_csv(out / "io_hourly.csv", ("location_id", "window_start", "io_ratio"), io_rows)

    groups = {
        "hepa_indoor": [sites[l][0] for l in sites if hepa[l] and sites[l][0] is not None],
        "non_hepa_indoor": [sites[l][0] for l in sites if not hepa[l] and sites[l][0] is not None],
        "outdoor": [cal[n] for n in cfg.outdoor_nodes() if n in cal],
        "reference": [s for n, s in refs.items() if n != REFERENCE_NODE],
    }
    net_rows = []
    net = {}
    for g, members in groups.items():
        na = network_average(members)
        net[g] = na
        net_rows.extend((iso(t), g, m, _clean(s), n) for t, m, s, n in
                        zip(na.start.tolist(), na.mean.tolist(), na.sigma.tolist(), na.n.tolist()))
    write_csv(out / "network_avg.csv", ("window_start", "group", "mean", "sigma", "n"), net_rows)

    # paired by site: mean hourly I/O during the smoke vs after it
    pairs, used = [], []
    for loc, (ind, outd) in sites.items():
        a = _site_io_mean(ind, outd, run.wilcoxon_during)
        b = _site_io_mean(ind, outd, run.wilcoxon_post)
        if a is not None and b is not None:
            pairs.append((a, b))
            used.append({"location_id": loc, "io_during": a, "io_post": b})
    wdoc = {
        "comparison": "site mean hourly I/O ratio, during vs post",
        "during": [iso(x) for x in run.wilcoxon_during] if run.wilcoxon_during else None,
        "post": [iso(x) for x in run.wilcoxon_post] if run.wilcoxon_post else None,
        "sites": used,
        "result": wilcoxon_signed_rank(pairs).to_json() if pairs else None,
    }
    _json(out / "wilcoxon.json", wdoc)

    def ts(na):
        return TimeSeries("net", HOUR, na.start, na.mean, np.ones(len(na.start)), na.n,
                          np.ones(len(na.start), dtype=bool))

    r_net = None
    if len(net["outdoor"].start) and REFERENCE_NODE in refs:
        r_net = correlation(ts(net["outdoor"]), refs[REFERENCE_NODE])
    by_group = {}
    for name, flag in (("hepa", True), ("non_hepa", False)):
        ratios = np.concatenate([io.ratio for loc, io in io_by_site.items() if hepa[loc] is flag]
                                or [np.zeros(0)])
        reds = [r.reduction_pct for r in rows if r.hepa is flag and r.reduction_pct is not None]
        by_group[name] = {
            "io": summary(ratios),
            "reduction_pct_median": float(np.median(reds)) if reds else None,
        }
    all_ratios = np.concatenate([io.ratio for io in io_by_site.values()] or [np.zeros(0)])
    _json(out / "summary.json", {
        "calibration_form": model.form,
        "clamped_windows": clamped,
        "outdoor_vs_reference_r": r_net,
        "io_all_sites": summary(all_ratios),
        "groups": by_group,
        "io_skipped_hours": {loc: io.skipped for loc, io in io_by_site.items()},
    })
    return {"clamped_windows_1h": clamped, "table2_rows": len(rows), "io_hours": len(io_rows)}


# ---------------------------------------------------------------- attribute

ATTRIBUTION_COLUMNS = ("date", "label", "c_mean", "f_fraction", "ac", "total_day")


def attribute(cfg: StudyConfig, src: Path, out: Path, model_dir: Path | None = None) -> dict:
    """Label the personal 10-min series by geofence and attribute each day."""
    out.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    node = run.personal_node
    counters = {"personal_windows": 0, "unclassified_windows": 0, "carried_windows": 0,
                "invalid_fixes": 0, "clamped_windows_10min": 0}
    if not node:
        write_csv(out / "attribution.csv", ATTRIBUTION_COLUMNS, [])
        _json(out / "exposure_shares.json", {"node": None})
        return counters
    cal, clamped, _ = _calibrated(cfg, src, "windows_10min.csv", "attribute", model_dir)
    if node not in cal:
        raise InputFormatError(f"no 10-min windows for personal node {node!r}", "attribute",
                               str(src / "windows_10min.csv"))
    series = cal[node].between(run.study_start, run.study_end)
    fixes = [(t, la, lo, ok) for t, n, la, lo, ok in read_gps(_need(src / "gps.csv", "attribute"), "attribute")
             if n == node]
    labeled = label_series(series, fixes, cfg.fences, run.carry_forward_s)
    days = attribute_days(labeled, run.utc_offset_hours)
    rows = []
    for d in days:
        for k in d.labels:
            rows.append((d.day.isoformat(), k, d.c[k], d.f[k], d.ac[k], d.total))
    write_csv(out / "attribution.csv", ATTRIBUTION_COLUMNS, rows)
    write_csv(out / "labels_10min.csv", ("window_start", "pm25", "label"),
              ((iso(t), v, lab or "") for t, v, lab in
               zip(labeled.start.tolist(), labeled.mean.tolist(), labeled.labels)))
    shares = {}
    for k in LABELS:
        s = exposure_share(days, [k])
        shares[k] = {"exposure_pct": s[0], "time_pct": s[1]} if s else None
    s = exposure_share(days, [OFFICE, OTHER])
    shares["office+other"] = {"exposure_pct": s[0], "time_pct": s[1]} if s else None
    counters.update(personal_windows=len(labeled.labels), unclassified_windows=labeled.unclassified,
                    carried_windows=labeled.carried, invalid_fixes=labeled.invalid_fixes,
                    clamped_windows_10min=clamped)
    _json(out / "exposure_shares.json", {
        "node": node,
        "days": len(days),
        "shares": shares,
        "unclassified_fraction": labeled.unclassified / len(labeled.labels) if labeled.labels else None,
        "counters": counters,
    })
    return counters


# ------------------------------------------------------------------- report

def _local(t: int, offset_h: float) -> datetime:
    return datetime.fromtimestamp(t, tz=timezone.utc) + timedelta(hours=offset_h)


def report(cfg: StudyConfig, src: Path, out: Path) -> dict:
    """Plot-ready CSV bundles from the analyze and attribute outputs."""
    out.mkdir(parents=True, exist_ok=True)
    run = cfg.run
    off = run.utc_offset_hours
    cal = read_windows(_need(src / "calibrated_1h.csv", "report"), "report")
    refs = read_windows(_need(src / "reference_1h.csv", "report"), "report")
    ref = refs.get(REFERENCE_NODE)
    ref_d = ref.as_dict() if ref is not None else {}

    # network groups: means with 1-sigma bands against the reference mean
    net: dict[str, dict] = {}
    with open(_need(src / "network_avg.csv", "report"), newline="") as f:
        for row in csv.DictReader(f):
            net.setdefault(row["window_start"], {})[row["group"]] = (row["mean"], row["sigma"])
    groups = ("hepa_indoor", "non_hepa_indoor", "outdoor")
    rows = []
    for t in sorted(net):
        g = net[t]
        line = [t]
        for name in groups:
            line.extend(g.get(name, ("", "")))
        ref_row = g.get("reference")
        line.append(ref_row[0] if ref_row else "")
        rows.append(line)
    header = ["window_start"] + [f"{n}_{c}" for n in groups for c in ("mean", "sigma")] + ["reference_mean"]
    n2 = write_csv(out / "fig2_network.csv", header, rows)

    # per-site indoor/outdoor with the reference mean
    rows = []
    for loc, site in cfg.sites.items():
        ind = cal.get(site.meta.indoor_node)
        outd = cal.get(site.meta.outdoor_node)
        di = ind.as_dict() if ind is not None else {}
        do = outd.as_dict() if outd is not None else {}
        for t in sorted(set(di) | set(do)):
            rows.append((loc, iso(t), di.get(t), do.get(t), ref_d.get(t)))
    n3 = write_csv(out / "fig3_sites.csv", ("location_id", "window_start", "indoor", "outdoor", "reference"),
                   rows)

    # box statistics of hourly I/O
    by_site: dict[str, list[float]] = {}
    with open(_need(src / "io_hourly.csv", "report"), newline="") as f:
        for row in csv.DictReader(f):
            by_site.setdefault(row["location_id"], []).append(float(row["io_ratio"]))
    rows = []
    for loc in cfg.sites:
        v = np.array(by_site.get(loc, []))
        if v.size:
            q1, med, q3 = np.percentile(v, [25, 50, 75])
            rows.append((loc, cfg.sites[loc].meta.hepa, v.size, v.min(), q1, med, q3, v.max(), v.mean()))
        else:
            rows.append((loc, cfg.sites[loc].meta.hepa, 0, None, None, None, None, None, None))
    n4 = write_csv(out / "fig4_io_box.csv",
                   ("location_id", "hepa", "n", "min", "q1", "median", "q3", "max", "mean"), rows)

    # personal 10-min trace against the home monitors, plus daily attribution
    n5 = n6 = 0
    labels_path = src / "labels_10min.csv"
    if run.personal_node and labels_path.exists():
        homes = []
        if run.home_site:
            home_out = cfg.sites[run.home_site].meta.outdoor_node
            homes = [s.meta.indoor_node for s in cfg.sites.values() if s.meta.outdoor_node == home_out]
        ten = read_windows(_need(src / "windows_10min.csv", "report"), "report")
        model = load_model(_need(src / "model.json", "report"))
        home_series = {h: apply(model, ten[h]).as_dict() for h in homes if h in ten}
        rows6 = []
        rows5 = []
        with open(labels_path, newline="") as f:
            for row in csv.DictReader(f):
                t = row["window_start"]
                epoch = int(datetime.strptime(t, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc).timestamp())
                loc = _local(epoch, off)
                night = in_band(loc.hour * 60 + loc.minute, run.night_band)
                rows5.append([t, loc.strftime("%Y-%m-%dT%H:%M"), row["pm25"], night]
                             + [home_series[h].get(epoch) for h in home_series])
                rows6.append((t, loc.strftime("%Y-%m-%dT%H:%M"), row["pm25"], row["label"]))
        n5 = write_csv(out / "fig5_personal.csv",
                       ["window_start", "local_time", "personal", "night"] + list(home_series), rows5)
        n6 = write_csv(out / "fig6a_microenv.csv", ("window_start", "local_time", "pm25", "label"), rows6)
        daily: dict[str, dict[str, str]] = {}
        with open(_need(src / "attribution.csv", "report"), newline="") as f:
            for row in csv.DictReader(f):
                daily.setdefault(row["date"], {})[row["label"]] = row["ac"]
        write_csv(out / "fig6b_daily.csv", ("date",) + LABELS,
                  ((d, *(daily[d].get(k, "") for k in LABELS)) for d in sorted(daily)))
    return {"fig2_rows": n2, "fig3_rows": n3, "fig4_rows": n4, "fig5_rows": n5, "fig6_rows": n6}


# ---------------------------------------------------------------- run all

def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: StudyConfig, input_dir: Path, out: Path) -> tuple[dict, str]:
    """Run every stage; returns the manifest and its sha256.

    Outputs are staged in a temporary directory next to ``out`` and moved in
    only after the last stage succeeds.
    """
    input_dir, out = Path(input_dir), Path(out)
    samples, reference = input_dir / "samples.csv", input_dir / "reference.csv"
    out.mkdir(parents=True, exist_ok=True)
    stage_dir = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        counters = {}
        counters.update(ingest(cfg, samples, reference, stage_dir))
        counters.update(calibrate(cfg, stage_dir, stage_dir))
        counters.update(analyze(cfg, stage_dir, stage_dir))
        counters.update(attribute(cfg, stage_dir, stage_dir))
        counters.update(report(cfg, stage_dir, stage_dir))
        files = sorted(p for p in stage_dir.iterdir() if p.is_file())
        manifest = {
            "package_version": __version__,
            "stages": STAGE_VERSIONS,
            "config_sha256": cfg.sha256,
            "inputs": {p.name: _sha(p) for p in (samples, reference)},
            "counters": counters,
            "rows": {p.name: count_rows(p) for p in files if p.suffix == ".csv"},
            "outputs": {p.name: _sha(p) for p in files},
        }
        _json(stage_dir / "manifest.json", manifest)
        digest = _sha(stage_dir / "manifest.json")
        for p in sorted(stage_dir.iterdir()):
            p.replace(out / p.name)
    finally:
        shutil.rmtree(stage_dir, ignore_errors=True)
    return manifest, digest
