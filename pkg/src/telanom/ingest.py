"""Reading, validating and grouping raw detection CSVs.

Input format (one row per detection):

    fishid,receiver,station,lat,lon,date,time_sa

``date`` is YYYY-MM-DD and ``time_sa`` is HH:MM:SS in UTC+2 (no DST).
Timestamps are stored internally as integer epoch seconds (UTC).

Station map format:

    station,lat,lon,order

``order`` is the station's 0-based position along the waterway; the set of
orders must be exactly 0..S-1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date, timezone, timedelta, datetime

from .errors import DataError

log = logging.getLogger(__name__)

# fixed UTC+2 offset of the study clock, in seconds
UTC_OFFSET_S = 7200

_EPOCH_ORDINAL = date(1970, 1, 1).toordinal()

DETECTION_COLUMNS = ["fishid", "receiver", "station", "lat", "lon", "date", "time_sa"]
STATION_COLUMNS = ["station", "lat", "lon", "order"]


@dataclass(frozen=True)
class DetectionRecord:
    fish_id: str
    receiver_id: str
    station_id: str
    lat: float
    lon: float
    timestamp: int  # epoch seconds, UTC


@dataclass
class FishTrack:
    fish_id: str
    detections: list  # of DetectionRecord, sorted by (timestamp, station_id)


class StationMap:
    """Receiver stations keyed by id, each with coordinates and a 0-based
    order index along the waterway."""

    def __init__(self, stations):
        # stations: iterable of (station_id, lat, lon, order)
        self._coords = {}
        self._order = {}
        for sid, lat, lon, order in stations:
            if sid in self._coords:
                raise DataError("duplicate station id %r" % sid)
            self._coords[sid] = (float(lat), float(lon))
            self._order[sid] = int(order)
        orders = sorted(self._order.values())
        if orders != list(range(len(orders))):
            raise DataError("station orders must be exactly 0..S-1, got %s" % orders)
        if not self._coords:
            raise DataError("station map is empty")

    def __len__(self):
        return len(self._coords)

    def __contains__(self, station_id):
        return station_id in self._coords

    def ids(self):
        return sorted(self._coords)

    def coords(self, station_id):
        try:
            return self._coords[station_id]
        except KeyError:
            raise DataError("unknown station id %r" % station_id) from None

    def order_of(self, station_id):
        try:
            return self._order[station_id]
        except KeyError:
            raise DataError("unknown station id %r" % station_id) from None


@dataclass
class ParseReport:
    n_rows: int = 0
    n_parsed: int = 0
    dropped: dict = field(default_factory=dict)  # reason -> count

    def drop(self, reason):
        self.dropped[reason] = self.dropped.get(reason, 0) + 1


def parse_timestamp(date_str, time_str):
    """UTC+2 calendar date + wall time -> integer epoch seconds (UTC)."""
    try:
        y, mo, dy = (int(p) for p in date_str.strip().split("-"))
        h, mi, s = (int(p) for p in time_str.strip().split(":"))
    except ValueError:
        raise ValueError("bad date/time %r %r" % (date_str, time_str)) from None
    if not (0 <= h <= 23 and 0 <= mi <= 59 and 0 <= s <= 59):
        raise ValueError("bad time %r" % time_str)
    days = date(y, mo, dy).toordinal() - _EPOCH_ORDINAL  # raises on bad dates
    return days * 86400 + h * 3600 + mi * 60 + s - UTC_OFFSET_S


def format_timestamp(ts):
    """Inverse of parse_timestamp: epoch seconds -> (date_str, time_str)."""
    dt = datetime.fromtimestamp(int(ts), tz=timezone(timedelta(seconds=UTC_OFFSET_S)))
    return dt.strftime("%Y-%m-%d"), dt.strftime("%H:%M:%S")


def local_day(ts):
    """Calendar day index (days since epoch) in the study's UTC+2 clock."""
    return (int(ts) + UTC_OFFSET_S) // 86400


def _check_header(fieldnames, required, path):
    missing = [c for c in required if c not in (fieldnames or [])]
    if missing:
        raise DataError("%s: missing required column(s) %s" % (path, missing))


def load_station_map(path):
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _check_header(reader.fieldnames, STATION_COLUMNS, path)
        rows = []
        for row in reader:
            try:
                rows.append((row["station"], float(row["lat"]),
                             float(row["lon"]), int(row["order"])))
            except (TypeError, ValueError):
                raise DataError("%s: malformed station row %r" % (path, row)) from None
    return StationMap(rows)


def parse_csv(path, station_map):
    """Parse a detection CSV against a station map.

    Malformed rows and rows whose station is not in the map are dropped and
    counted in the returned ParseReport. A missing file or a missing required
    column is an error.
    """
    records = []
    report = ParseReport()
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        _check_header(reader.fieldnames, DETECTION_COLUMNS, path)
        for row in reader:
            report.n_rows += 1
            try:
                fish = row["fishid"].strip()
                recv = row["receiver"].strip()
                station = row["station"].strip()
                if not fish or not station:
                    report.drop("missing_field")
                    continue
                lat = float(row["lat"])
                lon = float(row["lon"])
            except (AttributeError, TypeError, ValueError):
                report.drop("missing_field")
                continue
            if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
                report.drop("bad_coordinate")
                continue
            try:
                ts = parse_timestamp(row["date"], row["time_sa"])
            except (TypeError, ValueError):
                report.drop("bad_timestamp")
                continue
            if station not in station_map:
                report.drop("unknown_station")
                continue
            records.append(DetectionRecord(fish, recv, station, lat, lon, ts))
            report.n_parsed += 1
    for reason, n in sorted(report.dropped.items()):
        log.warning("%s: dropped %d row(s): %s", path, n, reason)
    return records, report


def write_detections_csv(records, path):
    """Serialize records back to the input CSV format.

    parse -> serialize -> parse round-trips valid rows exactly: floats are
    written with repr and timestamps re-expanded to the UTC+2 clock.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(DETECTION_COLUMNS)
        for r in records:
            d, t = format_timestamp(r.timestamp)
            w.writerow([r.fish_id, r.receiver_id, r.station_id,
                        repr(r.lat), repr(r.lon), d, t])


def deduplicate(records):
    """Drop exact repeats of (fish_id, station_id, timestamp), keeping the
    first occurrence. Returns (records, n_removed)."""
    seen = set()
    out = []
    for r in records:
        key = (r.fish_id, r.station_id, r.timestamp)
        if key in seen:
            continue
        seen.add(key)
        out.append(r)
    return out, len(records) - len(out)


def group_tracks(records):
    """Group records into one FishTrack per fish, detections sorted by
    (timestamp, station_id). Output is sorted by fish_id, so downstream
    results do not depend on input file order."""
    by_fish = {}
    for r in records:
        by_fish.setdefault(r.fish_id, []).append(r)
    tracks = []
    for fid in sorted(by_fish):
        dets = sorted(by_fish[fid], key=lambda r: (r.timestamp, r.station_id))
        tracks.append(FishTrack(fid, dets))
    return tracks
