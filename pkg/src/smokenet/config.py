"""Study configuration: run settings, site metadata, geofences, simulation knobs.

The file is INI-style key-value text.  Sections::

    [run]                 study window, UTC offset, calibration node, gates
    [site <location_id>]  one per indoor monitor; site survey columns plus the
                          box-model parameters used by ``simulate``
    [geofence <label>]    lat, lon, radius_m (label: home or office)
    [scenario]            synthetic-episode settings
    [personal]            wearable node, daily schedule, concentration sources

See ``data/seattle2020.cfg`` for a commented example.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .exposure import Geofence
from .timeseries import SiteMetadata, to_epoch

DEFAULT_CONFIG = Path(__file__).parent / "data" / "seattle2020.cfg"

_TRUE = {"y", "yes", "true", "1", "on"}
_FALSE = {"n", "no", "false", "0", "off", ""}


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"{key}: expected yes/no, got {text!r}")


def _clock(text: str) -> int:
    """'HH:MM' -> minutes after midnight."""
    hh, _, mm = text.strip().partition(":")
    m = int(hh) * 60 + int(mm or 0)
    if not 0 <= m <= 24 * 60:
        raise ValueError(f"time of day out of range: {text!r}")
    return m


def parse_band(text: str) -> tuple[int, int]:
    """'22:00-06:00' -> (1320, 360); bands may wrap midnight."""
    a, _, b = text.partition("-")
    return _clock(a), _clock(b)


def parse_bands(text: str) -> list[tuple[int, int]]:
    return [parse_band(p) for p in text.split(",") if p.strip()]


def in_band(minute: float, band: tuple[int, int]) -> bool:
    a, b = band
    if a <= b:
        return a <= minute < b
    return minute >= a or minute < b


def parse_interval(text: str) -> tuple[int, int] | None:
    text = text.strip()
    if not text:
        return None
    a, _, b = text.partition("/")
    return to_epoch(a), to_epoch(b)


@dataclass
class SiteDynamics:
    penetration: float = 0.8
    air_exchange: float = 0.5
    k_extra: float = 0.2
    hvac_k: float = 0.0
    hvac_on: list[tuple[int, int]] = field(default_factory=list)
    cooking: list[tuple[int, float]] = field(default_factory=list)
    outdoor_stop_after_h: float | None = None


@dataclass
class Site:
    meta: SiteMetadata
    dynamics: SiteDynamics


@dataclass
class RunConfig:
    study_start: int
    study_end: int
    utc_offset_hours: float = 0.0
    calibration_node: str = ""
    min_coverage: float = 0.75
    min_monitors: int = 1
    sample_period_s: float = 10.0
    carry_forward_s: int = 1800
    wilcoxon_during: tuple[int, int] | None = None
    wilcoxon_post: tuple[int, int] | None = None
    night_band: tuple[int, int] = (22 * 60, 6 * 60)
    personal_node: str = ""
    home_site: str = ""


@dataclass
class ScenarioParams:
    seed: int = 0
    outdoor_profile: list[tuple[float, float]] = field(default_factory=lambda: [(0.0, 100.0)])
    outdoor_variability: float = 0.0
    sensor_gain: float = 1.0
    sensor_offset: float = 0.0
    sensor_noise: float = 0.0
    reference_monitors: list[str] = field(default_factory=lambda: ["REF-1", "REF-2"])
    reference_noise: float = 0.0
    gps_jitter_m: float = 2.5
    gps_dropout: float = 0.0
    other_lat: float = 47.66
    other_lon: float = -122.31


@dataclass
class PersonalConfig:
    node: str = ""
    schedule: list[tuple[int, int, str]] = field(default_factory=list)
    sources: dict[str, tuple[str, float]] = field(default_factory=dict)


@dataclass
class StudyConfig:
    run: RunConfig
    sites: dict[str, Site]
    fences: list[Geofence]
    scenario: ScenarioParams
    personal: PersonalConfig
    text: str = ""

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()

    def node_classes(self) -> dict[str, str]:
        """Every registered sensor node and its location class."""
        out: dict[str, str] = {}
        for site in self.sites.values():
            out[site.meta.indoor_node] = "indoor"
            out[site.meta.outdoor_node] = "outdoor"
        if self.personal.node:
            out[self.personal.node] = "personal"
        return out

    def outdoor_nodes(self) -> list[str]:
        seen = []
        for site in self.sites.values():
            if site.meta.outdoor_node not in seen:
                seen.append(site.meta.outdoor_node)
        return seen


def _num(sec: configparser.SectionProxy, key: str, default, cast=float):
    raw = sec.get(key)
    if raw is None or raw.strip() == "":
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from None


def _site(name: str, sec: configparser.SectionProxy) -> Site:
    loc = name.split(None, 1)[1].strip()
    meta = SiteMetadata(
        location_id=loc,
        building_type=sec.get("building_type", ""),
        size_sqft=_num(sec, "size_sqft", None),
        hvac=_bool(sec.get("hvac", "no"), f"[{name}] hvac"),
        hepa=_bool(sec.get("hepa", "no"), f"[{name}] hepa"),
        window_opening=sec.get("window_opening", ""),
        indoor_sources=sec.get("indoor_sources", ""),
        indoor_node=sec.get("indoor_node", f"{loc}:indoor").strip(),
        outdoor_node=sec.get("outdoor_node", f"{loc}:outdoor").strip(),
    )
    cooking = []
    for part in sec.get("cooking", "").split(","):
        if part.strip():
            when, _, amount = part.partition("/")
            cooking.append((_clock(when), float(amount)))
    dyn = SiteDynamics(
        penetration=_num(sec, "penetration", 0.8),
        air_exchange=_num(sec, "air_exchange", 0.5),
        k_extra=_num(sec, "k_extra", 0.2),
        hvac_k=_num(sec, "hvac_k", 0.0),
        hvac_on=parse_bands(sec.get("hvac_on", "")),
        cooking=cooking,
        outdoor_stop_after_h=_num(sec, "outdoor_stop_after_h", None),
    )
    if not 0 < dyn.penetration <= 1:
        raise ConfigError(f"[{name}] penetration must be in (0, 1]")
    if not dyn.air_exchange > 0:
        raise ConfigError(f"[{name}] air_exchange must be positive")
    if dyn.k_extra < 0 or dyn.hvac_k < 0:
        raise ConfigError(f"[{name}] loss rates must be non-negative")
    return Site(meta, dyn)


def _profile(text: str) -> list[tuple[float, float]]:
    pts = []
    for part in text.split(","):
        if part.strip():
            h, _, v = part.partition(":")
            pts.append((float(h), float(v)))
    pts.sort()
    if not pts:
        raise ValueError("empty outdoor profile")
    return pts


def _schedule(text: str) -> list[tuple[int, int, str]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        band, label = part.split()
        a, b = parse_band(band)
        out.append((a, b, label))
    return out


def parse_config(text: str) -> StudyConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    if "run" not in cp:
        raise ConfigError("missing [run] section")
    r = cp["run"]
    try:
        run = RunConfig(
            study_start=to_epoch(r["study_start"]),
            study_end=to_epoch(r["study_end"]),
            utc_offset_hours=_num(r, "utc_offset_hours", 0.0),
            calibration_node=r.get("calibration_node", "").strip(),
            min_coverage=_num(r, "min_coverage", 0.75),
            min_monitors=_num(r, "min_monitors", 1, int),
            sample_period_s=_num(r, "sample_period_s", 10.0),
            carry_forward_s=int(_num(r, "carry_forward_min", 30.0) * 60),
            wilcoxon_during=parse_interval(r.get("wilcoxon_during", "")),
            wilcoxon_post=parse_interval(r.get("wilcoxon_post", "")),
            night_band=parse_band(r.get("night_band", "22:00-06:00")),
            personal_node=r.get("personal_node", "").strip(),
            home_site=r.get("home_site", "").strip(),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[run] {exc}") from None
    if run.study_end <= run.study_start:
        raise ConfigError("[run] study_end must follow study_start")
    for name in ("wilcoxon_during", "wilcoxon_post"):
        iv = getattr(run, name)
        if iv is not None and iv[1] <= iv[0]:
            raise ConfigError(f"[run] {name} is not well-ordered")

    sites: dict[str, Site] = {}
    fences: list[Geofence] = []
    for name in cp.sections():
        sec = cp[name]
        try:
            if name.startswith("site "):
                site = _site(name, sec)
                sites[site.meta.location_id] = site
            elif name.startswith("geofence "):
                fences.append(Geofence(name.split(None, 1)[1].strip(), float(sec["lat"]),
                                       float(sec["lon"]), _num(sec, "radius_m", 10.0)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[{name}] {exc}") from None
    if len({f.label for f in fences}) != len(fences):
        raise ConfigError("duplicate geofence labels")

    scen = ScenarioParams()
    if "scenario" in cp:
        s = cp["scenario"]
        try:
            scen = ScenarioParams(
                seed=_num(s, "seed", 0, int),
                outdoor_profile=_profile(s.get("outdoor_profile", "0:100")),
                outdoor_variability=_num(s, "outdoor_variability", 0.0),
                sensor_gain=_num(s, "sensor_gain", 1.0),
                sensor_offset=_num(s, "sensor_offset", 0.0),
                sensor_noise=_num(s, "sensor_noise", 0.0),
                reference_monitors=[m.strip() for m in s.get("reference_monitors", "REF-1, REF-2").split(",")
                                    if m.strip()],
                reference_noise=_num(s, "reference_noise", 0.0),
                gps_jitter_m=_num(s, "gps_jitter_m", 2.5),
                gps_dropout=_num(s, "gps_dropout", 0.0),
                other_lat=_num(s, "other_lat", 47.66),
                other_lon=_num(s, "other_lon", -122.31),
            )
        except ValueError as exc:
            raise ConfigError(f"[scenario] {exc}") from None

    personal = PersonalConfig(node=run.personal_node)
    if "personal" in cp:
        p = cp["personal"]
        try:
            personal.node = p.get("node", run.personal_node).strip()
            personal.schedule = _schedule(p.get("schedule", ""))
            for key in p:
                if key.startswith("source."):
                    label = key.split(".", 1)[1]
                    src, _, scale = p[key].partition("*")
                    personal.sources[label] = (src.strip(), float(scale) if scale.strip() else 1.0)
        except ValueError as exc:
            raise ConfigError(f"[personal] {exc}") from None
        run.personal_node = run.personal_node or personal.node

    cfg = StudyConfig(run, sites, fences, scen, personal, text)
    nodes = cfg.node_classes()
    if run.calibration_node and run.calibration_node not in nodes:
        raise ConfigError(f"[run] calibration_node {run.calibration_node!r} is not a registered node")
    if run.home_site and run.home_site not in sites:
        raise ConfigError(f"[run] home_site {run.home_site!r} is not a configured site")
    return cfg


def load_config(path: str | Path | None = None) -> StudyConfig:
    path = Path(path) if path else DEFAULT_CONFIG
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", path=str(path)) from None
    return parse_config(text)
