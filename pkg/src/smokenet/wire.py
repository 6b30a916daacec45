"""Decoders for the PMS-family binary frame and NMEA-0183 GPS sentences.

The PM sensor streams fixed 32-byte frames::

    0x42 0x4D | len (=28) | 13 x uint16 data words | uint16 checksum

all big-endian.  The checksum is the plain sum of the first 30 bytes,
truncated to 16 bits.  Data words, in order: PM1/PM2.5/PM10 at CF=1
("standard"), PM1/PM2.5/PM10 "atmospheric", six cumulative particle counts
per 0.1 L (>0.3, >0.5, >1.0, >2.5, >5.0, >10 um) and a status word.

Parsing failures are reported as :class:`FrameError` instances.  Single-frame
parsers raise them; the stream scanner yields them inline with the decoded
frames so a caller sees every corrupt region with its byte offset.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Iterator

START = b"\x42\x4d"
FRAME_LEN = 32
LENGTH_WORD = 28

_BODY = struct.Struct(">2sH13HH")

COUNT_BINS_UM = (0.3, 0.5, 1.0, 2.5, 5.0, 10.0)

# FrameError kinds
BAD_START = "BadStartBytes"
BAD_LENGTH = "BadLength"
BAD_CHECKSUM = "BadChecksum"
TRUNCATED = "Truncated"
BAD_SENTENCE = "BadSentence"


class FrameError(Exception):
    """A parse failure at a byte (or line) offset of the input stream."""

    def __init__(self, kind: str, offset: int = 0, detail: str = ""):
        self.kind = kind
        self.offset = offset
        self.detail = detail
        msg = f"{kind} at offset {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)

    def __eq__(self, other):
        if not isinstance(other, FrameError):
            return NotImplemented
        return (self.kind, self.offset) == (other.kind, other.offset)

    def __hash__(self):
        return hash((self.kind, self.offset))

    def __repr__(self):
        return f"FrameError({self.kind!r}, offset={self.offset})"


@dataclass(frozen=True)
class SensorFrame:
    pm1_std: int = 0
    pm25_std: int = 0
    pm10_std: int = 0
    pm1_atm: int = 0
    pm25_atm: int = 0
    pm10_atm: int = 0
    counts: tuple[int, ...] = (0, 0, 0, 0, 0, 0)
    status: int = 0

    def __post_init__(self):
        if len(self.counts) != 6:
            raise ValueError("counts must have six bins")
        for v in self.words():
            if not 0 <= v <= 0xFFFF:
                raise ValueError(f"field value {v} outside uint16 range")

    def words(self) -> tuple[int, ...]:
        return (
            self.pm1_std, self.pm25_std, self.pm10_std,
            self.pm1_atm, self.pm25_atm, self.pm10_atm,
            *self.counts, self.status,
        )

    @property
    def flags(self) -> tuple[str, ...]:
        """Monotonicity violations; real sensors emit these, so they are not rejected."""
        out = []
        if not (self.pm1_std <= self.pm25_std <= self.pm10_std):
            out.append("std_mass_order")
        if not (self.pm1_atm <= self.pm25_atm <= self.pm10_atm):
            out.append("atm_mass_order")
        c = self.counts
        if any(c[i] < c[i + 1] for i in range(5)):
            out.append("count_order")
        return tuple(out)


def checksum(data: bytes) -> int:
    return sum(data) & 0xFFFF


def encode_frame(frame: SensorFrame) -> bytes:
    head = struct.pack(">2sH13H", START, LENGTH_WORD, *frame.words())
    return head + struct.pack(">H", checksum(head))


def parse_pms_frame(data: bytes, offset: int = 0) -> SensorFrame:
    """Decode one 32-byte frame; raises :class:`FrameError` on any defect.

    ``offset`` is only used to label the error.
    """
    if len(data) < FRAME_LEN:
        raise FrameError(TRUNCATED, offset, f"{len(data)} of {FRAME_LEN} bytes")
    if len(data) > FRAME_LEN:
        raise ValueError("parse_pms_frame expects exactly 32 bytes")
    start, length, *words, csum = _BODY.unpack(data)
    if start != START:
        raise FrameError(BAD_START, offset)
    if length != LENGTH_WORD:
        raise FrameError(BAD_LENGTH, offset, f"length word {length}")
    calc = checksum(data[:30])
    if calc != csum:
        raise FrameError(BAD_CHECKSUM, offset, f"computed {calc:#06x}, frame says {csum:#06x}")
    return SensorFrame(*words[:6], counts=tuple(words[6:12]), status=words[12])


def resync_and_parse(stream: bytes) -> Iterator[SensorFrame | FrameError]:
    """Scan an arbitrary byte stream for frames.

    Yields frames and errors in stream order.  Bytes before the first marker
    (or between frames) that are not covered by a failed candidate produce a
    single ``BadStartBytes`` error for the region.  A failed candidate consumes
    one byte so a valid frame starting inside it is still found.  A partial
    frame at the end of the stream yields ``Truncated``.
    """
    stream = bytes(stream)
    n = len(stream)
    pos = 0
    covered = 0  # end of the span blamed on the last failed candidate
    while pos < n:
        cand = stream.find(START, pos)
        if cand < 0:
            # a lone trailing 0x42 may be the start of a frame cut short
            tail = n - 1 if stream[-1] == 0x42 else n
            gap = max(pos, covered)
            if gap < tail:
                yield FrameError(BAD_START, gap)
            if tail < n and tail >= covered:
                yield FrameError(TRUNCATED, tail)
            return
        gap = max(pos, covered)
        if gap < cand:
            yield FrameError(BAD_START, gap)
        if n - cand < FRAME_LEN:
            yield FrameError(TRUNCATED, cand)
            return
        try:
            frame = parse_pms_frame(stream[cand:cand + FRAME_LEN], cand)
        except FrameError as err:
            yield err
            covered = max(covered, cand + FRAME_LEN)
            pos = cand + 1
            continue
        yield frame
        pos = covered = cand + FRAME_LEN


# ---------------------------------------------------------------- NMEA 0183

@dataclass(frozen=True)
class GpsFix:
    timestamp: datetime
    latitude: float | None
    longitude: float | None
    valid: bool
    hdop_or_accuracy: float | None = None
    sentence: str = field(default="", compare=False)

    def __post_init__(self):
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} out of range")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} out of range")
        if self.valid and (self.latitude is None or self.longitude is None):
            raise ValueError("a valid fix needs a position")


def nmea_checksum(body: str) -> int:
    """XOR of every character between '$' and '*'."""
    c = 0
    for ch in body:
        c ^= ord(ch)
    return c


def with_checksum(body: str) -> str:
    return f"${body}*{nmea_checksum(body):02X}"


def ddmm_to_degrees(value: str, hemi: str, deg_digits: int) -> float:
    if len(value) < deg_digits + 2:
        raise ValueError(f"bad ddmm field {value!r}")
    deg = int(value[:deg_digits])
    minutes = float(value[deg_digits:])
    if not 0.0 <= minutes < 60.0:
        raise ValueError(f"minutes out of range in {value!r}")
    out = deg + minutes / 60.0
    if hemi in ("S", "W"):
        out = -out
    elif hemi not in ("N", "E"):
        raise ValueError(f"bad hemisphere {hemi!r}")
    return out


def _utc_time(field_: str, day: date) -> datetime:
    if len(field_) < 6:
        raise ValueError(f"bad time field {field_!r}")
    hh, mm = int(field_[0:2]), int(field_[2:4])
    sec = float(field_[4:])
    whole = int(sec)
    micro = min(int(round((sec - whole) * 1e6)), 999999)
    return datetime(day.year, day.month, day.day, hh, mm, whole, micro, tzinfo=timezone.utc)


def _position(f: list[str], i: int) -> tuple[float | None, float | None]:
    lat_s, lat_h, lon_s, lon_h = f[i:i + 4]
    if not lat_s and not lon_s:
        return None, None
    return ddmm_to_degrees(lat_s, lat_h, 2), ddmm_to_degrees(lon_s, lon_h, 3)


def parse_gps_sentence(line: str, day: date | None = None, offset: int = 0) -> GpsFix | None:
    """Decode an RMC or GGA sentence.

    Returns ``None`` for well-formed sentences of other types.  GGA carries
    no date, so ``day`` supplies it (default 1970-01-01).  Raises
    :class:`FrameError` (``BadSentence``) on malformed input or a checksum
    mismatch.
    """
    s = line.strip()
    try:
        if not s.startswith("$") or "*" not in s:
            raise ValueError("missing '$' or '*'")
        body, _, cs = s[1:].partition("*")
        if len(cs) != 2 or any(ch not in "0123456789ABCDEFabcdef" for ch in cs):
            raise ValueError(f"bad checksum field {cs!r}")
        if int(cs, 16) != nmea_checksum(body):
            raise ValueError("checksum mismatch")
        f = body.split(",")
        kind = f[0][-3:] if len(f[0]) == 5 else ""
        if kind == "RMC":
            if len(f) < 10:
                raise ValueError("short RMC")
            ds = f[9]
            if len(ds) != 6:
                raise ValueError(f"bad date {ds!r}")
            d = date(2000 + int(ds[4:6]), int(ds[2:4]), int(ds[0:2]))
            if f[2] not in ("A", "V"):
                raise ValueError(f"bad status {f[2]!r}")
            lat, lon = _position(f, 3)
            valid = f[2] == "A" and lat is not None
            return GpsFix(_utc_time(f[1], d), lat, lon, valid, None, s)
        if kind == "GGA":
            if len(f) < 9:
                raise ValueError("short GGA")
            lat, lon = _position(f, 2)
            quality = int(f[6]) if f[6] else 0
            hdop = float(f[8]) if f[8] else None
            valid = quality > 0 and lat is not None
            return GpsFix(_utc_time(f[1], day or date(1970, 1, 1)), lat, lon, valid, hdop, s)
        if not f[0].isalnum():
            raise ValueError(f"bad address field {f[0]!r}")
        return None
    except ValueError as exc:
        raise FrameError(BAD_SENTENCE, offset, str(exc)) from None


def parse_nmea_log(lines: Iterable[str], day: date | None = None) -> Iterator[GpsFix | FrameError]:
    """Decode a text log line by line; the error offset is the line number.

    The date of the latest RMC sentence is carried onto following GGA fixes.
    """
    for lineno, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            fix = parse_gps_sentence(line, day, lineno)
        except FrameError as err:
            yield err
            continue
        if fix is None:
            continue
        if "RMC" in fix.sentence[:7]:
            day = fix.timestamp.date()
        yield fix


def _ddmm(value: float, deg_digits: int) -> str:
    a = abs(value)
    deg = int(a)
    minutes = round((a - deg) * 60.0, 5)
    if minutes >= 60.0:
        deg, minutes = deg + 1, 0.0
    return f"{deg:0{deg_digits}d}{minutes:08.5f}"


def format_rmc(fix: GpsFix, talker: str = "GP") -> str:
    """Render a fix as an RMC sentence (5 decimal minutes)."""
    t = fix.timestamp.astimezone(timezone.utc)
    if fix.latitude is None or fix.longitude is None:
        pos = ",,,"
    else:
        lat = _ddmm(fix.latitude, 2)
        lon = _ddmm(fix.longitude, 3)
        pos = f"{lat},{'N' if fix.latitude >= 0 else 'S'},{lon},{'E' if fix.longitude >= 0 else 'W'}"
    body = (
        f"{talker}RMC,{t:%H%M%S}.{t.microsecond // 10000:02d},{'A' if fix.valid else 'V'},"
        f"{pos},0.0,0.0,{t:%d%m%y},,,A"
    )
    return with_checksum(body)
