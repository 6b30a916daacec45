"""Command-line entry point: ``smokenet <subcommand> [options]``.

Exit codes: 0 success, 2 malformed input, 3 bad configuration,
4 numerical failure (e.g. degenerate calibration data).
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import date
from pathlib import Path

from . import __version__, pipeline
from .config import load_config
from .errors import ConfigError, InputFormatError, PipelineError
from .records import SAMPLE_COLUMNS, fmt
from .scenario import generate_episode, write_episode
from .timeseries import LOCATION_CLASSES, iso, to_epoch
from .wire import FrameError, GpsFix, parse_nmea_log, resync_and_parse

log = logging.getLogger("smokenet")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="study config file (default: bundled Seattle 2020 setup)")
    p.add_argument("--out", default="out", help="output directory (default: ./out)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="smokenet", description=__doc__.splitlines()[0],
                                 parents=[common])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="binary/NMEA sensor logs -> sample CSV")
    p.add_argument("--pms", required=True, help="raw PMS frame stream")
    p.add_argument("--nmea", help="NMEA log recorded alongside the frames")
    p.add_argument("--node", required=True)
    p.add_argument("--class", dest="location_class", default="outdoor", choices=LOCATION_CLASSES)
    p.add_argument("--start", required=True, help="UTC time of the first frame, ISO 8601")
    p.add_argument("--period", type=float, default=10.0, help="seconds between frames")
    p.add_argument("--append", action="store_true", help="append to an existing samples.csv")

    for name, text in (("ingest", "validate samples and reference, write 10-min/1-h windows"),
                       ("calibrate", "fit and select the calibration model"),
                       ("analyze", "I/O ratios, per-site summary table, network averages, Wilcoxon"),
                       ("attribute", "geofence labels and daily exposure attribution"),
                       ("report", "plot-ready CSV bundles"),
                       ("run", "every stage in order, with a manifest")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--input", help="directory holding the previous stage's files "
                                       "(default: the --out directory)")
        if name == "calibrate":
            p.add_argument("--node", help="node to calibrate against the reference mean")

    p = sub.add_parser("simulate", parents=[common], help="synthetic smoke episode with ground truth")
    p.add_argument("--seed", type=int)
    p.add_argument("--binary", action="store_true", help="also write raw PMS frames and NMEA logs")
    return ap


def _parse_logs(args) -> int:
    try:
        t0 = to_epoch(args.start)
    except ValueError as exc:
        raise ConfigError(f"--start: {exc}") from None
    if not args.period > 0:
        raise ConfigError("--period must be positive")
    try:
        data = Path(args.pms).read_bytes()
    except OSError as exc:
        raise InputFormatError(exc.strerror, "parse", args.pms) from None
    frames, errors = [], 0
    for item in resync_and_parse(data):
        if isinstance(item, FrameError):
            errors += 1
            log.debug("%s: %s at byte %d", args.pms, item.kind, item.offset)
        else:
            frames.append(item)
    if not frames:
        raise InputFormatError("no valid frames found", "parse", args.pms)

    fixes: dict[int, GpsFix] = {}
    bad_sentences = 0
    if args.nmea:
        try:
            lines = Path(args.nmea).read_text(errors="replace").splitlines()
        except OSError as exc:
            raise InputFormatError(exc.strerror, "parse", args.nmea) from None
        day = date.fromisoformat(iso(t0)[:10])
        for item in parse_nmea_log(lines, day):
            if isinstance(item, FrameError):
                bad_sentences += 1
                continue
            k = round((item.timestamp.timestamp() - t0) / args.period)
            fixes.setdefault(k, item)

    out = Path(args.out)
    if out.suffix != ".csv":
        out = out / "samples.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    new = not (args.append and out.exists())
    with open(out, "w" if new else "a", newline="") as f:
        if new:
            f.write(",".join(SAMPLE_COLUMNS) + "\n")
        for i, fr in enumerate(frames):
            fix = fixes.get(i)
            lat = lon = valid = ""
            if fix is not None:
                valid = "1" if fix.valid else "0"
                if fix.valid:
                    lat, lon = fmt(fix.latitude), fmt(fix.longitude)
            t = t0 + round(i * args.period)
            f.write(f"{iso(t)},{args.node},{args.location_class},{fr.pm25_atm},{fr.pm25_std},"
                    f"{lat},{lon},{valid},,\n")
    print(f"{len(frames)} frames, {errors} frame errors, {len(fixes)} fixes, "
          f"{bad_sentences} bad sentences -> {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "parse":
            return _parse_logs(args)
        cfg = load_config(args.config)
        out = Path(args.out)
        if args.command == "simulate":
            ds = generate_episode(cfg, args.seed)
            paths = write_episode(ds, out, args.binary, cfg.run.personal_node)
            print(f"wrote {len(paths)} files to {out}")
            return 0
        src = Path(args.input) if args.input else out
        if args.command == "run":
            _, digest = pipeline.run_pipeline(cfg, src, out)
            print(f"manifest sha256 {digest}")
            return 0
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "ingest":
            counters = pipeline.ingest(cfg, src / "samples.csv", src / "reference.csv", out)
        elif args.command == "calibrate":
            if args.node:
                if args.node not in cfg.node_classes():
                    raise ConfigError(f"--node {args.node!r} is not a registered node")
                cfg.run.calibration_node = args.node
            counters = pipeline.calibrate(cfg, src, out)
        elif args.command == "analyze":
            counters = pipeline.analyze(cfg, src, out)
        elif args.command == "attribute":
            counters = pipeline.attribute(cfg, src, out)
        else:
            counters = pipeline.report(cfg, src, out)
        for k, v in counters.items():
            print(f"{k}: {v}")
        return 0
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
