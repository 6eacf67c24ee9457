"""Per-detection feature engineering.

Every detection becomes an 11-dimensional numeric vector:

    0  lat
    1  lon
    2  distance_km                   great-circle km from the previous detection
    3  duration_same_station_s      span of the detection's same-station run
    4  num_detections               per-fish total over the whole study
    5  num_days_detected            per-fish distinct calendar days (UTC+2)
    6  num_unique_stations          per-fish distinct stations
    7  consecutive_missing_stations stations skipped since the previous detection
    8  hour_sin                     sin of the time-of-day angle
    9  hour_cos                     cos of the time-of-day angle
    10 day_of_year_norm             (day-of-year - 1) / 365

Station and receiver identities are deliberately not model inputs; they ride
along as row metadata only.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import local_day, UTC_OFFSET_S

EARTH_RADIUS_KM = 6371.0

FEATURE_NAMES = [
    "lat",
    "lon",
    "distance_km",
    "duration_same_station_s",
    "num_detections",
    "num_days_detected",
    "num_unique_stations",
    "consecutive_missing_stations",
    "hour_sin",
    "hour_cos",
    "day_of_year_norm",
]

N_FEATURES = len(FEATURE_NAMES)

# column groups used by the resampler
CONTINUOUS_DIMS = (0, 1, 2)             # linearly interpolated
STEPWISE_DIMS = (3, 4, 5, 6, 7)         # zero-order hold
TIME_DIMS = (8, 9, 10)                  # recomputed from the grid timestamp

F_DISTANCE = 2
F_DURATION = 3
F_UNIQUE_STATIONS = 6
F_MISSING_STATIONS = 7


def haversine_km(lat_a, lon_a, lat_b, lon_b, radius_km=EARTH_RADIUS_KM):
    """Great-circle distance between two (lat, lon) points in degrees.

    The arcsin argument is clamped to [0, 1] so antipodal rounding noise
    cannot produce a domain error.
    """
    phi_a = math.radians(lat_a)
    phi_b = math.radians(lat_b)
    dphi = math.radians(lat_b - lat_a)
    dlmb = math.radians(lon_b - lon_a)
    a = (math.sin(dphi / 2.0) ** 2
         + math.cos(phi_a) * math.cos(phi_b) * math.sin(dlmb / 2.0) ** 2)
    a = min(1.0, max(0.0, a))
    return 2.0 * radius_km * math.asin(math.sqrt(a))


def _day_of_year_norm(ts):
    from datetime import date
    d = date.fromordinal(local_day(ts) + date(1970, 1, 1).toordinal())
    yday = d.timetuple().tm_yday
    return (yday - 1) / 365.0


def _hour_angle(ts):
    sod = (int(ts) + UTC_OFFSET_S) % 86400
    return 2.0 * math.pi * sod / 86400.0


@dataclass(frozen=True)
class FeatureRow:
    uid: int
    fish_id: str
    station_id: str
    timestamp: int
    values: np.ndarray  # shape (11,)
    label: int = 1       # 1 normal, 0 anomaly
    criterion_mask: int = 0


class FeatureTable:
    """Columnar store of feature rows.

    ``uid`` is a per-row identity used by the leakage guard; synthetic rows
    produced by the resampler carry uid -1.
    """

    def __init__(self, uid, fish_id, station_id, timestamp, values,
                 label=None, criterion_mask=None):
        n = len(uid)
        self.uid = np.asarray(uid, dtype=np.int64)
        self.fish_id = np.asarray(fish_id, dtype=object)
        self.station_id = np.asarray(station_id, dtype=object)
        self.timestamp = np.asarray(timestamp, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64).reshape(n, N_FEATURES)
        self.label = (np.ones(n, dtype=np.int8) if label is None
                      else np.asarray(label, dtype=np.int8))
        self.criterion_mask = (np.zeros(n, dtype=np.uint8) if criterion_mask is None
                               else np.asarray(criterion_mask, dtype=np.uint8))
        for col in (self.fish_id, self.station_id, self.timestamp,
                    self.label, self.criterion_mask):
            if len(col) != n:
                raise ValueError("column length mismatch")

    def __len__(self):
        return len(self.uid)

    @classmethod
    def empty(cls):
        return cls(np.empty(0, dtype=np.int64), [], [],
                   np.empty(0, dtype=np.int64),
                   np.empty((0, N_FEATURES)))

    @classmethod
    def from_rows(cls, rows):
        if not rows:
            return cls.empty()
        return cls([r.uid for r in rows],
                   [r.fish_id for r in rows],
                   [r.station_id for r in rows],
                   [r.timestamp for r in rows],
                   np.stack([r.values for r in rows]),
                   [r.label for r in rows],
                   [r.criterion_mask for r in rows])

    @classmethod
    def concat(cls, tables):
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        return cls(np.concatenate([t.uid for t in tables]),
                   np.concatenate([t.fish_id for t in tables]),
                   np.concatenate([t.station_id for t in tables]),
                   np.concatenate([t.timestamp for t in tables]),
                   np.concatenate([t.values for t in tables]),
                   np.concatenate([t.label for t in tables]),
                   np.concatenate([t.criterion_mask for t in tables]))

    def take(self, indices):
        idx = np.asarray(indices)
        return FeatureTable(self.uid[idx], self.fish_id[idx],
                            self.station_id[idx], self.timestamp[idx],
                            self.values[idx], self.label[idx],
                            self.criterion_mask[idx])

    def copy(self):
        return self.take(np.arange(len(self)))

    def row(self, i):
        return FeatureRow(int(self.uid[i]), self.fish_id[i], self.station_id[i],
                          int(self.timestamp[i]), self.values[i].copy(),
                          int(self.label[i]), int(self.criterion_mask[i]))

    def sorted_by_fish_time(self):
        order = np.lexsort((self.timestamp, self.fish_id.astype(str)))
        return self.take(order)

    def fish_groups(self):
        """Yield (fish_id, index array) with indices time-sorted, fish in
        sorted id order."""
        by_fish = {}
        for i, fid in enumerate(self.fish_id):
            by_fish.setdefault(fid, []).append(i)
        for fid in sorted(by_fish):
            idx = np.asarray(by_fish[fid])
            idx = idx[np.argsort(self.timestamp[idx], kind="stable")]
            yield fid, idx


def engineer_track(track, station_map, uid_start=0):
    """Engineer feature rows for one fish track (time-sorted detections)."""
    dets = track.detections
    n = len(dets)
    if n == 0:
        return []
    ts = np.array([d.timestamp for d in dets], dtype=np.int64)
    stations = [d.station_id for d in dets]

    num_detections = float(n)
    num_days = float(len({local_day(t) for t in ts}))
    num_unique = float(len(set(stations)))

    # maximal runs of consecutive same-station detections
    run_span = np.zeros(n)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and stations[j + 1] == stations[i]:
            j += 1
        run_span[i:j + 1] = float(ts[j] - ts[i])
        i = j + 1

    rows = []
    prev = None
    for i, d in enumerate(dets):
        if prev is None:
            dist = 0.0
            missing = 0.0
        else:
            dist = haversine_km(prev.lat, prev.lon, d.lat, d.lon)
            gap = abs(station_map.order_of(d.station_id)
                      - station_map.order_of(prev.station_id))
            missing = float(max(0, gap - 1))
        vals = np.array([
            d.lat,
            d.lon,
            dist,
            run_span[i],
            num_detections,
            num_days,
            num_unique,
            missing,
            math.sin(_hour_angle(d.timestamp)),
            math.cos(_hour_angle(d.timestamp)),
            _day_of_year_norm(d.timestamp),
        ])
        rows.append(FeatureRow(uid_start + i, track.fish_id, d.station_id,
                               int(d.timestamp), vals))
        prev = d
    return rows


def engineer_tracks(tracks, station_map):
    """Engineer all tracks into one FeatureTable with sequential uids."""
    rows = []
    uid = 0
    for track in tracks:
        track_rows = engineer_track(track, station_map, uid_start=uid)
        uid += len(track_rows)
        rows.extend(track_rows)
    return FeatureTable.from_rows(rows)


def recompute_time_features(values, timestamps):
    """Fill the time-encoding dims of ``values`` in place from timestamps."""
    for k, ts in enumerate(timestamps):
        ang = _hour_angle(ts)
        values[k, 8] = math.sin(ang)
        values[k, 9] = math.cos(ang)
        values[k, 10] = _day_of_year_norm(ts)
    return values


class Scaler:
    """Per-dimension min-max scaler fitted on training rows only.

    Transform is (x - min) / (max - min) with no clipping, so unseen values
    outside the fitted range land outside [0, 1]. A dimension that is
    constant in the fitted data uses divisor 1: fitted values map to 0 and
    unseen deviations stay visible instead of collapsing.
    """

    def __init__(self, mins=None, maxs=None):
        self.mins = mins
        self.maxs = maxs

    def fit(self, values):
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise DataError("cannot fit scaler on empty data")
        self.mins = values.min(axis=0)
        self.maxs = values.max(axis=0)
        return self

    def _denom(self):
        denom = self.maxs - self.mins
        return np.where(denom == 0.0, 1.0, denom)

    def transform(self, values):
        if self.mins is None:
            raise DataError("scaler is not fitted")
        return (np.asarray(values, dtype=np.float64) - self.mins) / self._denom()

    def apply(self, table):
        out = table.copy()
        out.values = self.transform(table.values)
        return out

    def to_json(self):
        return {"mins": self.mins.tolist(), "maxs": self.maxs.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["mins"], dtype=np.float64),
                   np.asarray(obj["maxs"], dtype=np.float64))


def write_feature_csv(table, path, full=False):
    """Dump a FeatureTable to CSV.

    Default layout: fish_id, timestamp, the 11 named dims, label.
    ``full=True`` prepends uid/station_id and appends criterion_mask so a
    table can be reloaded losslessly by read_feature_csv.
    """
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        head = ["fish_id", "timestamp"] + FEATURE_NAMES + ["label"]
        if full:
            head = ["uid", "station_id"] + head + ["criterion_mask"]
        w.writerow(head)
        for i in range(len(table)):
            row = ([table.fish_id[i], int(table.timestamp[i])]
                   + [repr(float(v)) for v in table.values[i]]
                   + [int(table.label[i])])
            if full:
                row = [int(table.uid[i]), table.station_id[i]] + row \
                    + [int(table.criterion_mask[i])]
            w.writerow(row)


def read_feature_csv(path):
    """Reload a table written by write_feature_csv(full=True)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        needed = ["uid", "station_id", "fish_id", "timestamp", "label",
                  "criterion_mask"] + FEATURE_NAMES
        missing = [c for c in needed if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError("%s: missing column(s) %s" % (path, missing))
        uid, fish, station, ts, vals, label, mask = [], [], [], [], [], [], []
        for row in reader:
            uid.append(int(row["uid"]))
            fish.append(row["fish_id"])
            station.append(row["station_id"])
            ts.append(int(row["timestamp"]))
            vals.append([float(row[name]) for name in FEATURE_NAMES])
            label.append(int(row["label"]))
            mask.append(int(row["criterion_mask"]))
    if not uid:
        return FeatureTable.empty()
    return FeatureTable(uid, fish, station, ts, np.asarray(vals), label, mask)
