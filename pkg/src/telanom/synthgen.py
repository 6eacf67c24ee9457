"""Seeded synthetic telemetry generator with exact ground truth.

Normal fish random-walk between adjacent stations along a curved waterway,
dwell for exponential times and are detected in Poisson bursts while they
dwell. Anomalies are injected per criterion:

  1. single-station fish (all of their detections anomalous);
  2. stationary fish: a normal phase, then one same-station run spanning
     more than 120 days (the run's detections anomalous);
  3. jump moves that skip at least two stations (the arrival detection
     anomalous).

Every station visit starts with an arrival detection, so the station-to-
station steps seen by the labeller are exactly the walk's moves and the
emitted ground truth matches rule labelling row for row.

Generation is parallel-safe per fish: each fish draws from its own rng
seeded by (seed, fish index).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DataError
from .ingest import DetectionRecord, StationMap, parse_timestamp

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQ = 111.320


@dataclass
class SynthConfig:
    n_fish: int = 24
    n_stations: int = 16
    span_days: float = 240.0
    start_date: str = "2017-03-01"
    waterway_km: float = 52.0
    origin_lat: float = -34.40
    origin_lon: float = 20.83
    mean_dwell_days: float = 2.0
    max_dwell_days: float = 20.0
    mean_gap_s: float = 7000.0           # inter-detection gap while dwelling
    fraction_single_station: float = 0.0835  # criterion-1 fish fraction
    fraction_stationary: float = 0.0         # criterion-2 fish fraction
    skip_rate: float = 0.05              # per-move probability of a jump
    stationary_gap_s: float = 21600.0    # detection gap during a c2 run
    normal_phase_days: float = 40.0      # c2 walk length before going still
    seed: int = 0

    def validate(self):
        if self.n_fish < 1 or self.n_stations < 4:
            raise DataError("need at least 1 fish and 4 stations")
        if self.span_days * 86400 < 4 * self.max_dwell_days * 86400:
            raise DataError("study span too short for the dwell cap")
        n_c2 = round(self.fraction_stationary * self.n_fish)
        if n_c2 and self.span_days - self.normal_phase_days < 135:
            raise DataError("stationary fish need > 120 days after the "
                            "normal phase; increase span_days")
        if not 0.0 <= self.skip_rate < 1.0:
            raise DataError("skip_rate must be in [0, 1)")


@dataclass
class GroundTruth:
    """criterion id per detection: 0 normal, else 1/2/3."""
    criterion: dict = field(default_factory=dict)  # (fish_id, ts) -> int

    def mask_for(self, fish_ids, timestamps):
        return np.array([self.criterion.get((f, int(t)), 0)
                         for f, t in zip(fish_ids, timestamps)],
                        dtype=np.int64)

    def n_anomalous(self):
        return sum(1 for v in self.criterion.values() if v)

    def save_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["fishid", "timestamp", "criterion"])
            for (fid, ts), crit in sorted(self.criterion.items()):
                w.writerow([fid, ts, crit])

    @classmethod
    def load_csv(cls, path):
        gt = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                gt.criterion[(row["fishid"], int(row["timestamp"]))] = \
                    int(row["criterion"])
        return gt


def make_station_map(cfg):
    """Stations spaced evenly along a gently curving polyline."""
    step_km = cfg.waterway_km / (cfg.n_stations - 1)
    lat, lon = cfg.origin_lat, cfg.origin_lon
    rows = []
    for i in range(cfg.n_stations):
        rows.append(("S%02d" % i, lat, lon, i))
        heading = math.radians(55.0 + 30.0 * math.sin(0.6 * i))
        lat += step_km * math.cos(heading) / KM_PER_DEG_LAT
        lon += step_km * math.sin(heading) / (KM_PER_DEG_LON_EQ
                                              * math.cos(math.radians(lat)))
    return StationMap(rows)


def _station_coords(station_map):
    coords = {}
    for sid in station_map.ids():
        coords[station_map.order_of(sid)] = (sid,) + station_map.coords(sid)
    return coords


class _FishEmitter:
    """Accumulates one fish's detections with strictly increasing integer
    timestamps, so (fish, station, timestamp) keys are unique by
    construction and ground truth stays aligned through deduplication."""

    def __init__(self, fish_id, coords, gt):
        self.fish_id = fish_id
        self.coords = coords
        self.gt = gt
        self.records = []
        self.last_ts = None
        self.last_marker = False

    def emit(self, order, ts, criterion):
        ts = int(ts)
        if self.last_ts is not None and ts <= self.last_ts:
            ts = self.last_ts + 1
        self.last_ts = ts
        sid, lat, lon = self.coords[order]
        self.records.append(DetectionRecord(
            self.fish_id, "R%02d" % order, sid, lat, lon, ts))
        if criterion:
            self.gt.criterion[(self.fish_id, ts)] = criterion


def _emit_dwell(emitter, rng, order, t_start, t_end, mean_gap_s,
                arrival_criterion=0):
    """Arrival detection at t_start, then a Poisson stream until t_end."""
    emitter.emit(order, t_start, arrival_criterion)
    t = t_start
    while True:
        t += max(1.0, rng.exponential(mean_gap_s))
        if t >= t_end:
            return
        emitter.emit(order, t, 0)


def _walk_fish(emitter, rng, cfg, t0, t_end, allow_jumps):
    """Adjacent random walk with optional jump moves.

    Returns the last station order the fish was actually detected at."""
    s_max = cfg.n_stations - 1
    order = int(rng.integers(0, s_max + 1))
    last_emitted = order
    t = t0 + rng.uniform(0, 86400.0)
    while t < t_end:
        dwell = min(rng.exponential(cfg.mean_dwell_days),
                    cfg.max_dwell_days) * 86400.0
        dwell = max(dwell, 3600.0)
        stop = min(t + dwell, t_end)
        criterion = 3 if (emitter.records and emitter.last_marker) else 0
        _emit_dwell(emitter, rng, order, t, stop, cfg.mean_gap_s, criterion)
        emitter.last_marker = False
        last_emitted = order
        t = stop + rng.uniform(60.0, 600.0)  # travel time before next dwell
        if allow_jumps and rng.random() < cfg.skip_rate:
            targets = [o for o in range(0, s_max + 1) if abs(o - order) >= 3]
            if targets:
                order = int(targets[rng.integers(len(targets))])
                emitter.last_marker = True
                continue
        order = _adjacent_step(order, s_max, rng)
    return last_emitted


def _adjacent_step(order, s_max, rng):
    if order == 0:
        return 1
    if order == s_max:
        return s_max - 1
    return order + (1 if rng.random() < 0.5 else -1)


def generate(cfg):
    """Generate (records, station_map, ground_truth) for a config.

    Records come back grouped per fish in time order; fish are assigned to
    criteria deterministically from the configured fractions (rounded).
    """
    cfg.validate()
    station_map = make_station_map(cfg)
    coords = _station_coords(station_map)
    gt = GroundTruth()

    t0 = parse_timestamp(cfg.start_date, "00:00:00")
    t_end = t0 + cfg.span_days * 86400.0

    n_c1 = round(cfg.fraction_single_station * cfg.n_fish)
    n_c2 = round(cfg.fraction_stationary * cfg.n_fish)
    if n_c1 + n_c2 > cfg.n_fish:
        raise DataError("anomalous fish fractions exceed the population")

    all_records = []
    s_max = cfg.n_stations - 1
    for i in range(cfg.n_fish):
        fish_id = "F%03d" % i
        rng = np.random.default_rng((cfg.seed, i))
        emitter = _FishEmitter(fish_id, coords, gt)
        emitter.last_marker = False

        if i < n_c1:
            # criterion 1: one station for the whole study
            order = int(rng.integers(0, s_max + 1))
            start = t0 + rng.uniform(0, 86400.0)
            _emit_dwell(emitter, rng, order, start, t_end, cfg.mean_gap_s)
            for rec in emitter.records:
                gt.criterion[(fish_id, rec.timestamp)] = 1
        elif i < n_c1 + n_c2:
            # criterion 2: normal walk, then one > 120 day same-station run
            t_still = t0 + cfg.normal_phase_days * 86400.0
            order = _walk_fish(emitter, rng, cfg, t0, t_still,
                               allow_jumps=False)
            still_order = _adjacent_step(order, s_max, rng)
            run_start = emitter.last_ts + max(1.0, rng.uniform(60.0, 600.0))
            n_before = len(emitter.records)
            _emit_dwell(emitter, rng, still_order, run_start, t_end,
                        cfg.stationary_gap_s)
            # slice by index: emit() truncates timestamps, so a float
            # run_start filter would drop the arrival row from the truth
            run = emitter.records[n_before:]
            if run[-1].timestamp - run[0].timestamp <= 120 * 86400:
                raise DataError("stationary run too short; lengthen span_days")
            for rec in run:
                gt.criterion[(fish_id, rec.timestamp)] = 2
        else:
            _walk_fish(emitter, rng, cfg, t0, t_end,
                       allow_jumps=cfg.skip_rate > 0)

        all_records.extend(emitter.records)

    return all_records, station_map, gt


def write_station_csv(station_map, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["station", "lat", "lon", "order"])
        for sid in station_map.ids():
            lat, lon = station_map.coords(sid)
            w.writerow([sid, repr(lat), repr(lon), station_map.order_of(sid)])


def config_json(cfg):
    return asdict(cfg)
