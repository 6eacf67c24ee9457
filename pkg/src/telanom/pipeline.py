"""End-to-end experiment orchestration.

Stage order: ingest -> engineer -> label -> split -> resample (normal
training rows only) -> scale -> fit -> threshold -> evaluate -> report.

The held-out test rows are tracked by uid in a LeakageGuard; every
training-side stage asserts none of them slipped in and aborts the run with
LeakageError if one did. Test rows are never resampled.

Reruns with the same seed and an injected deterministic timer produce
byte-identical reports; with the default wall clock only the runtime_s
fields differ.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .autoencoder import Autoencoder, TrainConfig, train
from .detectors import IsolationForest, LocalOutlierFactor, Dbscan, save_model
from .errors import DataError, LeakageError
from .features import FeatureTable, Scaler, engineer_tracks, write_feature_csv
from .ingest import parse_csv, load_station_map, deduplicate, group_tracks
from .labelling import label_all, write_label_csv
from .metrics import (confusion, compute_metrics, roc_auc, save_report,
                      write_summary_csv)
from .resampling import collect_candidates, fixed_plan, plan_for, resample
from .thresholding import build_table, select_threshold

# sub-seed tags so every seeded stage draws from its own stream
_SEED_SPLIT = 1
_SEED_AE_SPLIT = 2
_SEED_MODEL = 3

MODEL_NAMES = ("autoencoder", "iforest", "lof", "dbscan")


@dataclass
class RunConfig:
    input_csv: str = ""
    station_csv: str = ""
    out_dir: str = "out"
    seed: int = 0
    resample_interval: str = "auto"      # "auto" | "none" | seconds
    max_points: int = 5_000_000
    normal_test_fraction: float = 0.10
    anomaly_test_fraction: float = 0.50
    ae_val_fraction: float = 0.20
    split_unit: str = "detection"        # "detection" | "fish"
    models: str = "autoencoder,iforest,lof,dbscan"
    ci_repeats: int = 0
    dump_features: bool = False
    ae_units: int = 128
    ae_bottleneck: int = 2
    ae_learning_rate: float = 0.001
    ae_batch_size: int = 512
    ae_epochs: int = 50
    if_n_estimators: int = 100
    if_contamination: float = 0.001
    if_subsample: int = 256
    lof_k: int = 5
    lof_contamination: float = 0.01
    dbscan_eps: float = 0.5
    dbscan_min_pts: int = 10

    @property
    def model_list(self):
        names = [m.strip() for m in self.models.split(",") if m.strip()]
        if not names:
            raise DataError("no models requested; choose from %s"
                            % ", ".join(MODEL_NAMES))
        bad = [m for m in names if m not in MODEL_NAMES]
        if bad:
            raise DataError("unknown model(s) %s; choose from %s"
                            % (bad, ", ".join(MODEL_NAMES)))
        return names

    def interval_mode(self):
        """Returns "none", "auto" or an integer number of seconds."""
        v = str(self.resample_interval).strip().lower()
        if v in ("none", "auto"):
            return v
        try:
            return int(float(v))
        except ValueError:
            raise DataError("bad resample_interval %r"
                            % self.resample_interval) from None

    def validate(self):
        for name, frac in (("normal_test_fraction", self.normal_test_fraction),
                           ("anomaly_test_fraction", self.anomaly_test_fraction),
                           ("ae_val_fraction", self.ae_val_fraction)):
            if not 0.0 < frac < 1.0:
                raise DataError("%s must be in (0, 1)" % name)
        if self.split_unit not in ("detection", "fish"):
            raise DataError("split_unit must be 'detection' or 'fish'")
        self.model_list
        self.interval_mode()
        return self

    def to_json(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path):
        """Flat ``key = value`` config file; '#' starts a comment."""
        values = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        defaults = cls()
        with open(path) as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise DataError("%s:%d: expected key = value"
                                    % (path, lineno))
                key, _, value = line.partition("=")
                key = key.strip()
                value = value.strip()
                if key not in types:
                    raise DataError("%s:%d: unknown key %r" % (path, lineno, key))
                current = getattr(defaults, key)
                try:
                    if isinstance(current, bool):
                        values[key] = value.lower() in ("1", "true", "yes")
                    elif isinstance(current, int):
                        values[key] = int(value)
                    elif isinstance(current, float):
                        values[key] = float(value)
                    else:
                        values[key] = value
                except ValueError:
                    raise DataError("%s:%d: bad value %r for %s"
                                    % (path, lineno, value, key)) from None
        return cls(**values).validate()


@dataclass
class DatasetSplit:
    normal_test: FeatureTable
    normal_train: FeatureTable
    anomaly_test: FeatureTable
    anomaly_val: FeatureTable

    def counts(self):
        return {
            "normal_test": len(self.normal_test),
            "normal_train": len(self.normal_train),
            "anomaly_test": len(self.anomaly_test),
            "anomaly_val": len(self.anomaly_val),
        }

    def test_table(self):
        return FeatureTable.concat([self.normal_test, self.anomaly_test])


class LeakageGuard:
    """Remembers the held-out test uids; any training-side stage that sees
    one aborts the run."""

    def __init__(self, test_uids):
        self.test_uids = frozenset(int(u) for u in test_uids)

    @classmethod
    def from_split(cls, split):
        return cls(np.concatenate([split.normal_test.uid,
                                   split.anomaly_test.uid]))

    def check(self, table, stage):
        leaked = self.test_uids.intersection(int(u) for u in table.uid)
        if leaked:
            raise LeakageError(stage, leaked)
        return table


def _class_split(table, idx, fraction, rng, unit):
    """Split one label class into (held-out, rest) index arrays."""
    n_held = int(round(fraction * len(idx)))
    if unit == "detection":
        perm = idx[rng.permutation(len(idx))]
        return perm[:n_held], perm[n_held:]
    # fish unit: whole per-fish row groups go to one side
    groups = {}
    for i in idx:
        groups.setdefault(table.fish_id[i], []).append(i)
    fish = sorted(groups)
    order = rng.permutation(len(fish))
    held, rest, taken = [], [], 0
    for g in order:
        rows = groups[fish[g]]
        if taken < n_held:
            held.extend(rows)
            taken += len(rows)
        else:
            rest.extend(rows)
    return np.asarray(held, dtype=np.int64), np.asarray(rest, dtype=np.int64)


def split_rows(table, cfg, seed):
    """Stratified split: normals into test/training pool, anomalies into
    test/threshold-validation halves. Seeded and disjoint by construction."""
    rng = np.random.default_rng((seed, _SEED_SPLIT))
    normal_idx = np.flatnonzero(table.label == 1)
    anomaly_idx = np.flatnonzero(table.label == 0)
    if len(normal_idx) == 0 or len(anomaly_idx) == 0:
        raise DataError("split needs both labels present")

    n_test, n_train = _class_split(table, normal_idx,
                                   cfg.normal_test_fraction, rng,
                                   cfg.split_unit)
    a_test, a_val = _class_split(table, anomaly_idx,
                                 cfg.anomaly_test_fraction, rng,
                                 cfg.split_unit)
    return DatasetSplit(table.take(n_test), table.take(n_train),
                        table.take(a_test), table.take(a_val))


def train_val_split(table, val_fraction, seed):
    """Seeded (train, validation) row split of one table."""
    rng = np.random.default_rng((seed, _SEED_AE_SPLIT))
    perm = rng.permutation(len(table))
    n_val = int(round(val_fraction * len(table)))
    return table.take(perm[n_val:]), table.take(perm[:n_val])


def _model_seed(seed):
    return int(np.random.default_rng((seed, _SEED_MODEL)).integers(2 ** 31))


def _fit_autoencoder(cfg, x_train, x_val, seed):
    model = Autoencoder(x_train.shape[1], units=cfg.ae_units,
                        bottleneck=cfg.ae_bottleneck, seed=seed)
    tcfg = TrainConfig(learning_rate=cfg.ae_learning_rate,
                       batch_size=cfg.ae_batch_size,
                       epochs=cfg.ae_epochs, seed=seed)
    result = train(model, x_train, tcfg, val_rows=x_val)
    return model, result


def _build_classical(name, cfg, seed):
    if name == "iforest":
        return IsolationForest(n_estimators=cfg.if_n_estimators,
                               contamination=cfg.if_contamination,
                               subsample=cfg.if_subsample, seed=seed)
    if name == "lof":
        return LocalOutlierFactor(k=cfg.lof_k,
                                  contamination=cfg.lof_contamination)
    if name == "dbscan":
        return Dbscan(eps=cfg.dbscan_eps, min_pts=cfg.dbscan_min_pts)
    raise DataError("unknown classical model %r" % name)


def _evaluate(predicted, scores, actual):
    cm = confusion(predicted, actual)
    m = compute_metrics(cm)
    m["auc"] = roc_auc(scores, actual)
    m["fn_fraction"] = (cm.fn / (cm.ta + cm.fn)) if (cm.ta + cm.fn) else None
    m["fa_fraction"] = (cm.fa / (cm.fa + cm.tn)) if (cm.fa + cm.tn) else None
    return cm, m


@dataclass
class ExperimentResult:
    report: dict
    split: DatasetSplit
    train_pool: FeatureTable
    scaler: Scaler
    plan: object
    models: dict = field(default_factory=dict)
    threshold: object = None
    percentile_table: object = None
    loss_curve: object = None
    table: FeatureTable = None
    label_report: object = None


def prepare_table(cfg):
    """Stages ingest + engineer + label; returns (table, label_report,
    ingest summary)."""
    station_map = load_station_map(cfg.station_csv)
    records, parse_report = parse_csv(cfg.input_csv, station_map)
    records, n_dups = deduplicate(records)
    tracks = group_tracks(records)
    table = engineer_tracks(tracks, station_map)
    labelled, label_report = label_all(table)
    ingest_summary = {
        "rows_read": parse_report.n_rows,
        "rows_parsed": parse_report.n_parsed,
        "rows_dropped": parse_report.dropped,
        "duplicates_removed": n_dups,
        "n_fish": len(tracks),
    }
    return labelled, label_report, ingest_summary


def run_pipeline(labelled, cfg, seed, timer=time.perf_counter):
    """Split/resample/fit/threshold/evaluate on an already labelled table.

    Returns an ExperimentResult whose report carries one entry per model.
    """
    interval = cfg.interval_mode()
    split = split_rows(labelled, cfg, seed)
    guard = LeakageGuard.from_split(split)

    # resampling consumes only the normal training pool
    plan = None
    if interval == "none":
        train_pool = split.normal_train
    else:
        guard.check(split.normal_train, "resample")
        if interval == "auto":
            plan = plan_for(split.normal_train, cfg.max_points)
        else:
            plan = fixed_plan(interval, cfg.max_points)
        train_pool = resample(split.normal_train, plan)
    if len(train_pool) == 0:
        raise DataError("empty training pool after resampling")

    guard.check(train_pool, "scaler_fit")
    scaler = Scaler().fit(train_pool.values)

    ae_train_t, ae_val_t = train_val_split(train_pool, cfg.ae_val_fraction,
                                           seed)
    test = split.test_table()
    x_test = scaler.transform(test.values)
    y_test = test.label

    model_seed = _model_seed(seed)
    result = ExperimentResult(report={}, split=split, train_pool=train_pool,
                              scaler=scaler, plan=plan)
    interval_desc = (interval if interval == "none"
                     else (plan.delta_t if plan else None))

    model_reports = {}
    for name in cfg.model_list:
        t0 = timer()
        if name == "autoencoder":
            guard.check(ae_train_t, "ae_fit")
            guard.check(ae_val_t, "ae_fit")
            x_tr = scaler.transform(ae_train_t.values)
            x_val = scaler.transform(ae_val_t.values)
            model, loss_curve = _fit_autoencoder(cfg, x_tr, x_val, model_seed)

            guard.check(ae_val_t, "threshold")
            guard.check(split.anomaly_val, "threshold")
            val_x = np.vstack([x_val,
                               scaler.transform(split.anomaly_val.values)])
            val_y = np.concatenate([np.ones(len(x_val), dtype=int),
                                    np.zeros(len(split.anomaly_val), dtype=int)])
            errors = model.scores(val_x)
            table = build_table(errors, val_y)
            selected = select_threshold(table)

            test_errors = model.scores(x_test)
            predicted = np.where(test_errors > selected.threshold, 0, 1)
            cm, m = _evaluate(predicted, test_errors, y_test)
            result.models[name] = model
            result.threshold = selected
            result.loss_curve = loss_curve
            result.percentile_table = table
        else:
            guard.check(train_pool, "fit")
            guard.check(split.anomaly_val, "fit")
            fit_x = np.vstack([scaler.transform(train_pool.values),
                               scaler.transform(split.anomaly_val.values)])
            model = _build_classical(name, cfg, model_seed)
            model.fit(fit_x)
            predicted = model.predict(x_test)
            scores = model.scores(x_test)
            cm, m = _evaluate(predicted, scores, y_test)
            result.models[name] = model
        runtime = timer() - t0

        entry = {
            "model": name,
            "resample_interval": interval_desc,
            "confusion": cm.to_json(),
            "metrics": m,
            "ci": None,
            "runtime_s": runtime,
            "n_parameters": result.models[name].n_parameters,
        }
        if name == "autoencoder":
            entry["threshold"] = result.threshold.to_json()
        model_reports[name] = entry

    result.report = {
        "seed": seed,
        "resample_interval": interval_desc,
        "split": split.counts(),
        "resample_plan": plan.to_json() if plan else None,
        "n_train_pool": len(train_pool),
        "models": model_reports,
    }
    return result


def run_experiment(cfg, timer=time.perf_counter):
    """Full pipeline from CSVs to report files under cfg.out_dir."""
    cfg.validate()
    labelled, label_report, ingest_summary = prepare_table(cfg)
    result = run_pipeline(labelled, cfg, cfg.seed, timer=timer)
    result.table = labelled
    result.label_report = label_report
    result.report["config"] = cfg.to_json()
    result.report["ingest"] = ingest_summary
    result.report["labels"] = label_report.to_json()

    if cfg.ci_repeats >= 2:
        result.report["ci"] = _reshuffle_report(labelled, cfg)
        for name, entry in result.report["models"].items():
            entry["ci"] = result.report["ci"].get(name)

    _write_artifacts(cfg, result)
    return result


def _reshuffle_report(labelled, cfg):
    """Split-reshuffle confidence intervals per model (mean, half-width)."""
    from .metrics import reshuffle_ci

    out = {}
    for name in cfg.model_list:
        one = dataclasses.replace(cfg, models=name)

        def run_once(data, run_seed, _cfg=one):
            res = run_pipeline(data, _cfg, run_seed)
            return res.report["models"][_cfg.models]["metrics"]

        out[name] = reshuffle_ci(run_once, labelled, cfg.ci_repeats, cfg.seed)
    return out


def evaluate_saved(cfg, models_dir, timer=time.perf_counter):
    """Evaluate previously trained model files on the test split rebuilt
    from the same config and seed.

    ``models_dir`` is the output directory of an earlier run/train: it must
    hold scaler.json, models/*.json and (for the autoencoder)
    threshold.json.
    """
    from .detectors import load_model

    cfg.validate()
    labelled, _label_report, _ingest = prepare_table(cfg)
    split = split_rows(labelled, cfg, cfg.seed)

    with open(os.path.join(models_dir, "scaler.json")) as f:
        scaler = Scaler.from_json(json.load(f))
    test = split.test_table()
    x_test = scaler.transform(test.values)
    y_test = test.label

    reports = {}
    for name in cfg.model_list:
        path = os.path.join(models_dir, "models", "%s.json" % name)
        if not os.path.exists(path):
            raise DataError("no saved model %r under %s" % (name, models_dir))
        t0 = timer()
        if name == "autoencoder":
            model = Autoencoder.load(path)
            with open(os.path.join(models_dir, "threshold.json")) as f:
                thr = json.load(f)["threshold"]
            scores = model.scores(x_test)
            predicted = np.where(scores > thr, 0, 1)
        else:
            model = load_model(path)
            predicted = model.predict(x_test)
            scores = model.scores(x_test)
        cm, m = _evaluate(predicted, scores, y_test)
        reports[name] = {
            "model": name,
            "resample_interval": cfg.interval_mode(),
            "confusion": cm.to_json(),
            "metrics": m,
            "ci": None,
            "runtime_s": timer() - t0,
            "n_parameters": model.n_parameters,
        }
    return {"seed": cfg.seed, "split": split.counts(), "models": reports}


def _write_artifacts(cfg, result):
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "models"), exist_ok=True)

    save_report(result.report, os.path.join(out, "report.json"))
    result.label_report.save(os.path.join(out, "label_report.json"))
    write_label_csv(result.table, os.path.join(out, "labels.csv"))
    if cfg.dump_features:
        write_feature_csv(result.table, os.path.join(out, "features.csv"),
                          full=True)
    with open(os.path.join(out, "scaler.json"), "w") as f:
        json.dump(result.scaler.to_json(), f)
        f.write("\n")

    if result.plan is not None:
        _, _, hist = collect_candidates(result.split.normal_train)
        result.plan.save(os.path.join(out, "plan.json"), histogram=hist)
        write_feature_csv(result.train_pool,
                          os.path.join(out, "resampled.csv"), full=True)

    with open(os.path.join(out, "split.csv"), "w") as f:
        f.write("uid,partition\n")
        for part in ("normal_test", "normal_train", "anomaly_test",
                     "anomaly_val"):
            for u in getattr(result.split, part).uid:
                f.write("%d,%s\n" % (u, part))

    for name, model in result.models.items():
        path = os.path.join(out, "models", "%s.json" % name)
        if name == "autoencoder":
            model.save(path)
        else:
            save_model(model, path)
    if result.threshold is not None:
        result.threshold.save(os.path.join(out, "threshold.json"))
        result.percentile_table.save_csv(
            os.path.join(out, "percentile_table.csv"))
    if result.loss_curve is not None:
        result.loss_curve.save_csv(os.path.join(out, "loss_curve.csv"))

    rows = []
    for name, entry in result.report["models"].items():
        m = entry["metrics"]
        rows.append({
            "model": name,
            "resampling": entry["resample_interval"],
            "accuracy": m["accuracy"], "recall": m["recall"],
            "specificity": m["specificity"], "precision": m["precision"],
            "f1_score": m["f1_score"], "auc": m["auc"],
            "n_parameters": entry["n_parameters"],
            "train_time_minutes": entry["runtime_s"] / 60.0,
            "fn_fraction": m["fn_fraction"], "fa_fraction": m["fa_fraction"],
        })
    write_summary_csv(rows, os.path.join(out, "summary.csv"))
