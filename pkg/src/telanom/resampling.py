"""Irregular-to-regular resampling of normal detection rows.

The sampling interval is derived from the data: for every (fish, day) group
the minimum positive gap between consecutive detections is a candidate, the
global interval is the minimum candidate, and a budget search picks the
smallest candidate whose projected point count fits ``max_points``. Grids
are rebuilt per fish per day from the first to the last detection of the
day; continuous dims are linearly interpolated, count-like dims carry the
most recent real value forward, and time encodings are recomputed from the
grid timestamp.

Only normal rows (label 1) are ever resampled; anomalous rows keep their
original irregular timestamps elsewhere in the pipeline.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .features import (FeatureTable, CONTINUOUS_DIMS, STEPWISE_DIMS,
                       recompute_time_features)
from .ingest import local_day

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResamplePlan:
    delta_t: int                 # grid spacing, seconds
    candidate_gaps: tuple        # sorted distinct per-(fish, day) min gaps
    max_points: int
    budget_exceeded: bool = False  # no candidate fit the budget; largest used

    @property
    def f_s(self):
        return 1.0 / self.delta_t

    def to_json(self):
        return {
            "delta_t": self.delta_t,
            "f_s": self.f_s,
            "candidate_gaps": list(self.candidate_gaps),
            "max_points": self.max_points,
            "budget_exceeded": self.budget_exceeded,
        }

    def save(self, path, histogram=None):
        obj = self.to_json()
        if histogram is not None:
            obj["gap_histogram"] = {str(k): v for k, v in sorted(histogram.items())}
        with open(path, "w") as f:
            json.dump(obj, f, indent=2, sort_keys=True)
            f.write("\n")


def daily_min_gap(timestamps):
    """Minimum positive gap between consecutive timestamps of one day,
    or None when the day has no positive gap to measure."""
    ts = np.asarray(timestamps)
    if len(ts) < 2:
        return None
    gaps = np.diff(np.sort(ts))
    gaps = gaps[gaps > 0]
    if len(gaps) == 0:
        return None
    return int(gaps.min())


def global_rate(day_gaps):
    """Global sampling interval and rate from per-day minimum gaps."""
    gaps = [g for g in day_gaps if g is not None]
    if not gaps:
        raise DataError("no measurable inter-detection gaps")
    delta_t = int(min(gaps))
    return delta_t, 1.0 / delta_t


def tradeoff_search(candidate_gaps, max_points, span):
    """Pick the smallest candidate gap whose projected point count
    span/gap fits the budget. When none fits, fall back to the largest
    candidate and warn."""
    cands = sorted(set(int(g) for g in candidate_gaps if g and g > 0))
    if not cands:
        raise DataError("no candidate gaps to search")
    for g in cands:
        if span / g <= max_points:
            return ResamplePlan(g, tuple(cands), int(max_points))
    g = cands[-1]
    log.warning("no candidate gap fits budget %d over span %d; "
                "falling back to largest gap %d", max_points, span, g)
    return ResamplePlan(g, tuple(cands), int(max_points), budget_exceeded=True)


def _day_groups(table):
    """Yield (fish_id, day, time-sorted index array) for every (fish, day)."""
    for fish_id, idx in table.fish_groups():
        days = np.array([local_day(t) for t in table.timestamp[idx]])
        for day in np.unique(days):
            yield fish_id, int(day), idx[days == day]


def collect_candidates(table):
    """Per-(fish, day) minimum gaps and the total resampling span.

    Returns (sorted distinct gaps, total span seconds, gap histogram).
    """
    gaps = []
    span = 0
    for _fish, _day, idx in _day_groups(table):
        ts = table.timestamp[idx]
        span += int(ts.max() - ts.min())
        g = daily_min_gap(ts)
        if g is not None:
            gaps.append(g)
    return sorted(set(gaps)), span, Counter(gaps)


def plan_for(table, max_points):
    """Build the automatic resampling plan for a table of normal rows."""
    cands, span, _hist = collect_candidates(table)
    return tradeoff_search(cands, max_points, span)


def fixed_plan(delta_t, max_points=0):
    """A plan pinned to an explicit operating interval (e.g. 90 s or 65 s)."""
    delta_t = int(delta_t)
    if delta_t <= 0:
        raise DataError("resampling interval must be positive")
    return ResamplePlan(delta_t, (delta_t,), int(max_points))


def _grid(t0, t1, delta_t):
    """Regular timestamps t0, t0+dt, ... covering [t0, t1]; the final point
    is t1 itself, so only the last gap may be shorter than delta_t."""
    k = int((t1 - t0) // delta_t)
    ts = t0 + delta_t * np.arange(k + 1, dtype=np.int64)
    if ts[-1] < t1:
        ts = np.append(ts, t1)
    return ts


def resample(table, plan):
    """Resample normal rows onto per-(fish, day) regular grids.

    Grid rows carry uid -1 (synthetic). A (fish, day) group with a single
    detection passes through unchanged. Raises DataError if any input row
    is anomalous.
    """
    if np.any(table.label == 0):
        raise DataError("resample: input contains anomalous rows")

    uid, fish, station, ts_out, vals = [], [], [], [], []
    for fish_id, _day, idx in _day_groups(table):
        src_ts = table.timestamp[idx].astype(np.float64)
        src_vals = table.values[idx]
        if len(idx) == 1:
            i = idx[0]
            uid.append(int(table.uid[i]))
            fish.append(fish_id)
            station.append(table.station_id[i])
            ts_out.append(int(table.timestamp[i]))
            vals.append(table.values[i].copy())
            continue

        grid = _grid(int(src_ts[0]), int(src_ts[-1]), plan.delta_t)
        out = np.empty((len(grid), table.values.shape[1]))
        gridf = grid.astype(np.float64)
        for d in CONTINUOUS_DIMS:
            out[:, d] = np.interp(gridf, src_ts, src_vals[:, d])
        hold = np.searchsorted(src_ts, gridf, side="right") - 1
        hold = np.clip(hold, 0, len(idx) - 1)
        for d in STEPWISE_DIMS:
            out[:, d] = src_vals[hold, d]
        recompute_time_features(out, grid)

        stations_src = table.station_id[idx]
        for k in range(len(grid)):
            uid.append(-1)
            fish.append(fish_id)
            station.append(stations_src[hold[k]])
            ts_out.append(int(grid[k]))
        vals.append(out)

    if not ts_out:
        return FeatureTable.empty()
    values = np.vstack([v.reshape(-1, table.values.shape[1]) for v in vals])
    out_table = FeatureTable(uid, fish, station, ts_out, values)
    return out_table.sorted_by_fish_time()
