"""End-to-end runs: data preparation, both training stages, experiment grids."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from . import persist
from .classifier import MlpClassifier, clf_score, train_classifier
from .config import clf_config, nf_config
from .dataeval import (ANOMALY, NORMAL, LabeledDataset, Standardizer, concat, ingest_csv, make_blob,
                       make_moons, roc_auc, split, subsample_anomalies)
from .flows import FlowStack
from .ndmath import RngState
from .nftrain import TrainTrace, train_flow
from .tailgen import TailSpec

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["run_id", "n_anomalies", "seed", "auc", "status"]


def load_dataset(cfg: dict, seed: int) -> LabeledDataset:
    ds = cfg["dataset"]
    if ds["kind"] == "moons":
        return make_moons(ds["n"], ds["noise"], RngState(seed).spawn(10))
    label_map = {k: NORMAL if v == "normal" else ANOMALY for k, v in ds["label_map"].items()}
    return ingest_csv(ds["csv"], ds["label_column"], label_map)


def prepare_data(cfg: dict, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    """Stratified train/test split; an optional novel blob joins the test set only."""
    data = load_dataset(cfg, seed)
    frac = cfg["dataset"]["test_fraction"]
    train, test = split(data, (1.0 - frac, frac), RngState(seed).spawn(11), stratify=True)
    blob = cfg["dataset"]["novel_blob"]
    if blob is not None:
        extra = make_blob(int(blob["n"]), blob["center"], float(blob["sigma"]), RngState(seed).spawn(12))
        test = concat(test, extra)
    return train, test


def build_flow(cfg: dict, d: int, seed: int) -> FlowStack:
    f = cfg["flow"]
    return FlowStack.build(d, n_layers=f["n_layers"], kind=f["kind"], hidden=tuple(f["hidden"]),
                           rng=RngState(seed).spawn(20), bins=f["bins"], bound=f["bound"], s_max=f["s_max"])


def fit_flow(cfg: dict, train: LabeledDataset, seed: int) -> tuple[FlowStack, Standardizer, TrainTrace]:
    """Step 1: standardize on training normals and fit the flow to them."""
    std = Standardizer.fit(train.normals)
    flow = build_flow(cfg, train.X.shape[1], seed)
    flow, trace = train_flow(std.transform(train.normals), flow, nf_config(cfg, seed))
    return flow, std, trace


def fit_classifier(cfg: dict, flow: FlowStack | None, std: Standardizer, train: LabeledDataset, seed: int,
                   holdout: LabeledDataset | None = None) -> MlpClassifier:
    """Step 2: train on standardized normals, known anomalies and (with a flow) surrogates."""
    spec = TailSpec(cfg["tail"]["p"], train.X.shape[1]) if flow is not None else None
    ho = None if holdout is None else (std.transform(holdout.X), holdout.y)
    return train_classifier(flow, std.transform(train.normals), std.transform(train.anomalies), spec,
                            clf_config(cfg, seed), holdout=ho)


def evaluate(clf: MlpClassifier, std: Standardizer, test: LabeledDataset) -> float:
    return roc_auc(clf_score(clf, std.transform(test.X)), test.y)


def _config_digest(cfg: dict) -> str:
    relevant = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Row:
    run_id: str
    n_anomalies: int
    seed: int
    auc: float
    status: str = "ok"

    def cells(self):
        auc = "" if self.auc is None or not np.isfinite(self.auc) else repr(float(self.auc))
        seed = "" if self.seed is None else str(self.seed)
        n = "" if self.n_anomalies is None else str(self.n_anomalies)
        return [self.run_id, n, seed, auc, self.status]


def _flow_key(cfg: dict) -> str:
    relevant = {k: cfg[k] for k in ("flow", "nf")}
    relevant["dataset"] = {k: v for k, v in cfg["dataset"].items() if k != "novel_blob"}
    return hashlib.sha256(json.dumps(relevant, sort_keys=True).encode()).hexdigest()[:12]


def flow_cache_key(cfg: dict, seed: int) -> tuple:
    """Key under which :func:`experiment` and :func:`tail_sweep` share trained flows."""
    return _flow_key(cfg), seed


def _flow_for_seed(cfg, train, seed, out_dir, cache):
    key = flow_cache_key(cfg, seed)
    if key in cache:
        return cache[key]
    path = None if out_dir is None else os.path.join(out_dir, "flows", f"flow-{key[0]}-s{seed}.nfad")
    if path is not None and os.path.exists(path):
        try:
            flow, std = persist.load_model(path, expect_kind="flow")
            cache[key] = (flow, std)
            return cache[key]
        except persist.ModelFileError:
            log.warning("discarding unreadable cached flow %s", path)
    flow, std, _ = fit_flow(cfg, train, seed)
    if path is not None:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        persist.save_model(path, flow, std)
    cache[key] = (flow, std)
    return cache[key]


def run_id(method: str, count: int, seed: int) -> str:
    return f"{method}-k{count}-s{seed}"


def experiment(cfg: dict, anomaly_counts, seeds, out_dir: str | None = None, method: str = "nfad",
               flow_cache: dict | None = None) -> list[Row]:
    """Grid of (anomaly count x seed) runs plus per-count mean/std rows.

    ``method`` is ``"nfad"`` or ``"two-class"`` (same classifier, no
    surrogates). With ``out_dir`` every finished row is stored under
    ``rows/`` and reused on rerun when its config digest still matches; one
    flow per seed is cached under ``flows/``. A failing row is recorded with
    its error and the grid continues.
    """
    if method not in ("nfad", "two-class"):
        raise ValueError(f"unknown method {method!r}")
    digest = _config_digest(cfg)
    cache = {} if flow_cache is None else flow_cache
    rows: list[Row] = []
    for count in anomaly_counts:
        for seed in seeds:
            rid = run_id(method, count, seed)
            row_path = None if out_dir is None else os.path.join(out_dir, "rows", rid + ".json")
            cached = _read_row(row_path, digest)
            if cached is not None:
                rows.append(cached)
                continue
            try:
                train, test = prepare_data(cfg, seed)
                train_k = subsample_anomalies(train, count, RngState(seed).spawn(13))
                if method == "nfad":
                    flow, std = _flow_for_seed(cfg, train, seed, out_dir, cache)
                else:
                    flow, std = None, Standardizer.fit(train.normals)
                clf = fit_classifier(cfg, flow, std, train_k, seed)
                row = Row(rid, count, seed, evaluate(clf, std, test))
            except (ValueError, FloatingPointError) as exc:
                row = Row(rid, count, seed, float("nan"), f"error: {exc}".replace("\n", " "))
            rows.append(row)
            _write_row(row_path, row, digest)
    return rows + aggregate(rows, method)


def aggregate(rows: list[Row], method: str = "nfad") -> list[Row]:
    out = []
    for count in dict.fromkeys(r.n_anomalies for r in rows):
        aucs = np.array([r.auc for r in rows if r.n_anomalies == count and r.status == "ok"])
        status = "ok" if aucs.size else "error: no successful runs"
        mean = float(aucs.mean()) if aucs.size else float("nan")
        std = float(aucs.std()) if aucs.size else float("nan")
        out.append(Row(f"{method}-k{count}-mean", count, None, mean, status))
        out.append(Row(f"{method}-k{count}-std", count, None, std, status))
    return out


def _read_row(path, digest):
    if path is None or not os.path.exists(path):
        return None
    try:
        with open(path) as fh:
            rec = json.load(fh)
        if rec.get("digest") != digest or rec.get("status") != "ok":
            return None
        return Row(rec["run_id"], int(rec["n_anomalies"]), int(rec["seed"]), float(rec["auc"]), "ok")
    except (OSError, ValueError, KeyError, TypeError):
        return None


def _write_row(path, row: Row, digest):
    if path is None:
        return
    os.makedirs(os.path.dirname(path), exist_ok=True)
    rec = {"run_id": row.run_id, "n_anomalies": row.n_anomalies, "seed": row.seed,
           "auc": row.auc if np.isfinite(row.auc) else None, "status": row.status, "digest": digest}
    with open(path, "w") as fh:
        json.dump(rec, fh, sort_keys=True)


def write_metrics(path, rows: list[Row]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tail_sweep(cfg: dict, p_values, seeds, flow_cache: dict | None = None) -> dict:
    """One-class AUC per tail mass, reusing one trained flow per seed."""
    cache = {} if flow_cache is None else flow_cache
    result = {p: [] for p in p_values}
    for seed in seeds:
        train, test = prepare_data(cfg, seed)
        train0 = subsample_anomalies(train, 0, RngState(seed).spawn(13))
        flow, std = _flow_for_seed(cfg, train, seed, None, cache)
        for p in p_values:
            run_cfg = dict(cfg, tail=dict(cfg["tail"], p=p))
            clf = fit_classifier(run_cfg, flow, std, train0, seed)
            result[p].append(evaluate(clf, std, test))
    return result
