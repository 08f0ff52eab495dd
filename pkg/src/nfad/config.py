"""Run configuration: one JSON document, flags override individual keys.

Recognised keys (defaults in :data:`DEFAULTS`)::

    seed                       int, base seed of every random stream
    out                        output directory
    dataset.kind               "moons" | "csv"
    dataset.n, dataset.noise   moons size and noise std
    dataset.csv                path of a headed numeric CSV (kind "csv")
    dataset.label_column       name of the label column
    dataset.label_map          raw label -> "normal" | "anomaly"
    dataset.test_fraction      stratified held-out fraction
    dataset.novel_blob         null or {"n", "center", "sigma"}: extra test-only anomalies
    flow.kind                  "rqs" | "affine"
    flow.n_layers, flow.hidden, flow.bins, flow.bound, flow.s_max
    nf.epochs, nf.batch_size, nf.lambda_max, nf.ramp_fraction, nf.reg_samples, nf.lr, nf.weight_decay
    tail.p                     latent tail mass
    clf.epochs, clf.batch_size, clf.surrogates_per_batch, clf.anomalies_per_batch,
    clf.lr, clf.weight_decay, clf.weights
"""

from __future__ import annotations

import copy
import json
import os

from .classifier import ClfTrainConfig
from .nftrain import NfTrainConfig

DEFAULTS = {
    "seed": 0,
    "out": "nfad-out",
    "dataset": {
        "kind": "moons",
        "n": 2000,
        "noise": 0.1,
        "csv": None,
        "label_column": "label",
        "label_map": {"normal": "normal", "anomaly": "anomaly", "1": "normal", "0": "anomaly"},
        "test_fraction": 0.3,
        "novel_blob": None,
    },
    "flow": {"kind": "rqs", "n_layers": 6, "hidden": [64, 64], "bins": 8, "bound": 4.0, "s_max": 3.0},
    "nf": {"epochs": 200, "batch_size": 100, "lambda_max": 1.0, "ramp_fraction": 0.3, "reg_samples": None,
           "lr": 1e-3, "weight_decay": 0.0},
    "tail": {"p": 0.05},
    "clf": {"epochs": 10, "batch_size": 100, "surrogates_per_batch": None, "anomalies_per_batch": None,
            "lr": 1e-3, "weight_decay": 0.01, "weights": "balanced"},
}

# Classifier epochs sized for the 2-D toy sets, where an epoch is only a handful of steps.
MOONS_PRESET = {"clf": {"epochs": 100}}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def merge(base: dict, override: dict, prefix: str = "", problems: list | None = None) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        path = f"{prefix}{key}"
        if key not in base:
            if problems is not None:
                problems.append(f"{path}: unknown key")
            continue
        if isinstance(base[key], dict) and key != "label_map" and key != "novel_blob":
            if not isinstance(val, dict):
                if problems is not None:
                    problems.append(f"{path}: expected an object")
                continue
            out[key] = merge(base[key], val, path + ".", problems)
        else:
            out[key] = copy.deepcopy(val)
    return out


def set_path(cfg: dict, dotted: str, value) -> None:
    node = cfg
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node[k]
    node[keys[-1]] = value


def _num(problems, cfg, path, lo=None, hi=None, integer=False, allow_none=False, lo_open=False):
    node = cfg
    for k in path.split("."):
        node = node[k]
    if node is None and allow_none:
        return
    ok = isinstance(node, (int, float)) and not isinstance(node, bool)
    if ok and integer:
        ok = float(node).is_integer()
    if not ok:
        problems.append(f"{path}: expected {'an integer' if integer else 'a number'}, got {node!r}")
        return
    if lo is not None and (node < lo or (lo_open and node == lo)):
        problems.append(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {node}")
    if hi is not None and node > hi:
        problems.append(f"{path}: must be <= {hi}, got {node}")


def validate(cfg: dict, need_paths: bool = True) -> None:
    """Raise :class:`ConfigError` listing every violated key."""
    problems: list[str] = []
    _num(problems, cfg, "seed", lo=0, integer=True)
    ds = cfg["dataset"]
    if ds["kind"] not in ("moons", "csv"):
        problems.append(f"dataset.kind: expected 'moons' or 'csv', got {ds['kind']!r}")
    _num(problems, cfg, "dataset.n", lo=2, integer=True)
    _num(problems, cfg, "dataset.noise", lo=0)
    _num(problems, cfg, "dataset.test_fraction", lo=0, hi=1, lo_open=True)
    if ds["kind"] == "csv":
        if not ds["csv"]:
            problems.append("dataset.csv: required when dataset.kind is 'csv'")
        elif need_paths and not os.path.exists(ds["csv"]):
            problems.append(f"dataset.csv: file not found: {ds['csv']}")
    if not isinstance(ds["label_map"], dict) or not all(
            v in ("normal", "anomaly") for v in ds["label_map"].values()):
        problems.append("dataset.label_map: values must be 'normal' or 'anomaly'")
    blob = ds["novel_blob"]
    if blob is not None and not (isinstance(blob, dict) and {"n", "center", "sigma"} <= set(blob)):
        problems.append("dataset.novel_blob: expected null or an object with n, center, sigma")
    if cfg["flow"]["kind"] not in ("rqs", "affine"):
        problems.append(f"flow.kind: expected 'rqs' or 'affine', got {cfg['flow']['kind']!r}")
    _num(problems, cfg, "flow.n_layers", lo=1, integer=True)
    _num(problems, cfg, "flow.bins", lo=1, integer=True)
    _num(problems, cfg, "flow.bound", lo=0, lo_open=True)
    _num(problems, cfg, "flow.s_max", lo=0, lo_open=True)
    hidden = cfg["flow"]["hidden"]
    if not (isinstance(hidden, list) and all(isinstance(h, int) and h >= 1 for h in hidden)):
        problems.append("flow.hidden: expected a list of positive integers")
    _num(problems, cfg, "nf.epochs", lo=1, integer=True)
    _num(problems, cfg, "nf.batch_size", lo=1, integer=True)
    _num(problems, cfg, "nf.lambda_max", lo=0)
    _num(problems, cfg, "nf.ramp_fraction", lo=0, hi=1)
    _num(problems, cfg, "nf.reg_samples", lo=1, integer=True, allow_none=True)
    _num(problems, cfg, "nf.lr", lo=0, lo_open=True)
    _num(problems, cfg, "nf.weight_decay", lo=0)
    _num(problems, cfg, "tail.p", lo=0, hi=1, lo_open=True)
    _num(problems, cfg, "clf.epochs", lo=1, integer=True)
    _num(problems, cfg, "clf.batch_size", lo=1, integer=True)
    _num(problems, cfg, "clf.surrogates_per_batch", lo=1, integer=True, allow_none=True)
    _num(problems, cfg, "clf.anomalies_per_batch", lo=1, integer=True, allow_none=True)
    _num(problems, cfg, "clf.lr", lo=0, lo_open=True)
    _num(problems, cfg, "clf.weight_decay", lo=0)
    w = cfg["clf"]["weights"]
    if not (w in ("balanced", "unit") or (isinstance(w, list) and len(w) == 3
                                          and all(isinstance(v, (int, float)) and v > 0 for v in w))):
        problems.append("clf.weights: expected 'balanced', 'unit' or three positive numbers")
    if problems:
        raise ConfigError(problems)


def load_config(path: str | None = None, overrides: dict | None = None, preset: dict | None = None,
                need_paths: bool = True) -> dict:
    """Defaults <- preset <- config file <- dotted-key overrides, then validate."""
    problems: list[str] = []
    cfg = copy.deepcopy(DEFAULTS)
    if preset:
        cfg = merge(cfg, preset)
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError([f"config: file not found: {path}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: invalid JSON: {exc}"]) from None
        cfg = merge(cfg, user, problems=problems)
    for dotted, value in (overrides or {}).items():
        set_path(cfg, dotted, value)
    try:
        validate(cfg, need_paths=need_paths)
    except ConfigError as exc:
        problems += exc.problems
    if problems:
        raise ConfigError(problems)
    return cfg


def nf_config(cfg: dict, seed: int | None = None) -> NfTrainConfig:
    return NfTrainConfig(seed=cfg["seed"] if seed is None else seed, **cfg["nf"])


def clf_config(cfg: dict, seed: int | None = None) -> ClfTrainConfig:
    c = dict(cfg["clf"])
    if isinstance(c["weights"], list):
        c["weights"] = tuple(c["weights"])
    return ClfTrainConfig(seed=cfg["seed"] if seed is None else seed, **c)
