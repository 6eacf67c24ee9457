"""Rule-based anomaly labelling of engineered detection rows.

Three independent criteria mark detections as anomalous (label 0):

  1. the fish was seen at exactly one station over the whole study
     (every one of its detections is flagged);
  2. the fish has at least two distinct stations but sat in one maximal
     same-station run spanning strictly more than 120 days (only the run's
     detections are flagged);
  3. the fish skipped more than one station between consecutive detections
     (only the arrival detection is flagged).

A detection's label is 0 iff any criterion fires; the per-criterion origins
are kept in a 3-bit mask (bit 0 = criterion 1, bit 1 = criterion 2,
bit 2 = criterion 3).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .features import F_UNIQUE_STATIONS, F_MISSING_STATIONS

STATIONARY_SPAN_S = 120 * 86400

CRIT_SINGLE_STATION = 1
CRIT_STATIONARY = 2
CRIT_SKIPPED = 4


@dataclass
class LabelReport:
    n_rows: int = 0
    n_normal: int = 0
    n_anomalous: int = 0
    per_criterion: dict = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    per_fish: dict = field(default_factory=dict)  # fish_id -> criterion mask

    @property
    def anomalous_fraction(self):
        return self.n_anomalous / self.n_rows if self.n_rows else 0.0

    def to_json(self):
        return {
            "n_rows": self.n_rows,
            "n_normal": self.n_normal,
            "n_anomalous": self.n_anomalous,
            "anomalous_fraction": self.anomalous_fraction,
            "per_criterion": {str(k): v for k, v in self.per_criterion.items()},
            "per_fish": dict(sorted(self.per_fish.items())),
        }

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2, sort_keys=True)
            f.write("\n")


def criterion_single_station(values):
    """Flag every row of a fish seen at exactly one station."""
    return values[:, F_UNIQUE_STATIONS] == 1.0


def criterion_stationary(station_ids, timestamps, span_s=STATIONARY_SPAN_S):
    """Flag maximal same-station runs spanning strictly more than span_s.

    Only meaningful for fish with at least two distinct stations; a
    single-station fish is criterion 1's job and gets no flags here.
    """
    n = len(station_ids)
    mask = np.zeros(n, dtype=bool)
    if len(set(station_ids)) < 2:
        return mask
    i = 0
    while i < n:
        j = i
        while j + 1 < n and station_ids[j + 1] == station_ids[i]:
            j += 1
        if timestamps[j] - timestamps[i] > span_s:
            mask[i:j + 1] = True
        i = j + 1
    return mask


def criterion_skipped(values):
    """Flag arrival detections that skipped more than one station."""
    return values[:, F_MISSING_STATIONS] > 1.0


def label_all(table):
    """Apply all three criteria to an engineered FeatureTable.

    Returns (labelled copy, LabelReport). Deterministic and independent of
    input row order: rows are examined per fish in time order and flags are
    written back through the original indices.
    """
    out = table.copy()
    mask = np.zeros(len(table), dtype=np.uint8)

    report = LabelReport(n_rows=len(table))
    for fish_id, idx in table.fish_groups():
        vals = table.values[idx]
        stations = list(table.station_id[idx])
        ts = table.timestamp[idx]

        m1 = criterion_single_station(vals)
        m2 = criterion_stationary(stations, ts)
        m3 = criterion_skipped(vals)

        fish_mask = np.zeros(len(idx), dtype=np.uint8)
        fish_mask[m1] |= CRIT_SINGLE_STATION
        fish_mask[m2] |= CRIT_STATIONARY
        fish_mask[m3] |= CRIT_SKIPPED
        mask[idx] = fish_mask

        report.per_criterion[1] += int(m1.sum())
        report.per_criterion[2] += int(m2.sum())
        report.per_criterion[3] += int(m3.sum())
        fish_bits = 0
        if m1.any():
            fish_bits |= CRIT_SINGLE_STATION
        if m2.any():
            fish_bits |= CRIT_STATIONARY
        if m3.any():
            fish_bits |= CRIT_SKIPPED
        report.per_fish[fish_id] = fish_bits

    out.criterion_mask = mask
    out.label = np.where(mask > 0, 0, 1).astype(np.int8)
    report.n_anomalous = int((out.label == 0).sum())
    report.n_normal = report.n_rows - report.n_anomalous
    return out, report


def write_label_csv(table, path):
    """Dump per-detection labels: fish_id, timestamp, label, criterion_mask."""
    import csv
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["fish_id", "timestamp", "label", "criterion_mask"])
        for i in range(len(table)):
            w.writerow([table.fish_id[i], int(table.timestamp[i]),
                        int(table.label[i]), int(table.criterion_mask[i])])
