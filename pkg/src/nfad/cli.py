"""``nfad`` command line: the two training stages as separate, file-based commands.

Each command is a pure function of (config, input files, seed); rerunning
with the same inputs rewrites byte-identical outputs. Failures print one
line ``nfad: error: <kind>: <message>`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import persist
from .classifier import clf_score
from .config import MOONS_PRESET, ConfigError, load_config
from .dataeval import ANOMALY, NORMAL, density_grid, ingest_csv, roc_auc, subsample_anomalies
from .ndmath import RngState
from .pipeline import Row, experiment, fit_classifier, fit_flow, prepare_data, read_metrics, write_metrics
from .tailgen import TailSpec, gen_surrogates

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"nfad: error: usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--dataset", choices=["moons", "csv"])
    p.add_argument("--csv", help="input CSV (training or evaluation data)")
    p.add_argument("--label-column")
    p.add_argument("--tail-p", type=float)
    p.add_argument("--lambda-max", type=float)
    p.add_argument("--epochs-nf", type=int)
    p.add_argument("--epochs-clf", type=int)
    p.add_argument("--anomaly-counts", help="comma-separated known-anomaly counts")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nfad", description="Normalizing-flow surrogate anomalies for anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write train.csv and test.csv for the configured dataset")
    _common(p)

    p = sub.add_parser("train-flow", help="fit the flow to the normal rows of --csv")
    _common(p)

    p = sub.add_parser("sample-surrogates", help="draw surrogate anomalies from a trained flow")
    _common(p)
    p.add_argument("--flow", required=True)
    p.add_argument("--n", type=int, default=1000)

    p = sub.add_parser("train-clf", help="fit the classifier using a trained flow")
    _common(p)
    p.add_argument("--flow", required=True)
    p.add_argument("--n-anomalies", type=int, help="keep only this many known anomalies from --csv")
    p.add_argument("--holdout", help="labeled CSV whose loss is logged after every epoch")

    p = sub.add_parser("score", help="score rows of --csv with a trained classifier")
    _common(p)
    p.add_argument("--model", required=True)

    p = sub.add_parser("evaluate", help="ROC AUC of a score file against the labels of --csv")
    _common(p)
    p.add_argument("--scores", required=True)
    p.add_argument("--run-id", default="evaluate")

    p = sub.add_parser("density-grid", help="log-density grid of a trained 2-D flow")
    _common(p)
    p.add_argument("--flow", required=True)
    p.add_argument("--bounds", type=float, nargs=4, metavar=("X0", "X1", "Y0", "Y1"), default=[-3, 3, -3, 3])
    p.add_argument("--resolution", type=int, default=200)
    p.add_argument("--base-side", action="store_true", help="latent density of the inverse image")

    p = sub.add_parser("experiment", help="grid over known-anomaly counts and seeds")
    _common(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--method", choices=["nfad", "two-class"], default="nfad")
    return parser


def _int_list(text: str, name: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"{name}: expected comma-separated integers, got {text!r}"]) from None


def resolve_config(args) -> dict:
    overrides = {}
    for flag, key in (("seed", "seed"), ("out", "out"), ("dataset", "dataset.kind"), ("csv", "dataset.csv"),
                      ("label_column", "dataset.label_column"), ("tail_p", "tail.p"),
                      ("lambda_max", "nf.lambda_max"), ("epochs_nf", "nf.epochs"), ("epochs_clf", "clf.epochs")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    # commands that read a CSV take it as data input, not as a dataset definition
    if args.command != "gen-data" and args.command != "experiment" and "dataset.kind" not in overrides:
        overrides.pop("dataset.csv", None)
    kind = overrides.get("dataset.kind")
    if kind is None and args.config:
        try:
            with open(args.config) as fh:
                kind = json.load(fh).get("dataset", {}).get("kind")
        except (OSError, ValueError, AttributeError):
            kind = None
    preset = MOONS_PRESET if kind in (None, "moons") else None
    return load_config(args.config, overrides, preset=preset)


def _label_map(cfg):
    return {k: NORMAL if v == "normal" else ANOMALY for k, v in cfg["dataset"]["label_map"].items()}


def _read_csv(cfg, path):
    if not path:
        raise ConfigError(["csv: --csv is required for this command"])
    if not os.path.exists(path):
        raise ConfigError([f"csv: file not found: {path}"])
    return ingest_csv(path, cfg["dataset"]["label_column"], _label_map(cfg))


def _write_matrix(path, X, names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def cmd_gen_data(args, cfg):
    train, test = prepare_data(cfg, cfg["seed"])
    train.to_csv(os.path.join(cfg["out"], "train.csv"), cfg["dataset"]["label_column"])
    test.to_csv(os.path.join(cfg["out"], "test.csv"), cfg["dataset"]["label_column"])


def cmd_train_flow(args, cfg):
    train = _read_csv(cfg, args.csv)
    flow, std, trace = fit_flow(cfg, train, cfg["seed"])
    persist.save_model(os.path.join(cfg["out"], "flow.nfad"), flow, std)
    trace.to_csv(os.path.join(cfg["out"], "flow_trace.csv"))


def cmd_sample_surrogates(args, cfg):
    flow, std = persist.load_model(args.flow, expect_kind="flow")
    x = gen_surrogates(flow, TailSpec(cfg["tail"]["p"], flow.d), args.n, RngState(cfg["seed"]).spawn(30))
    if std is not None:
        x = std.inverse_transform(x)
    _write_matrix(os.path.join(cfg["out"], "surrogates.csv"), x, [f"x{i}" for i in range(flow.d)])


def cmd_train_clf(args, cfg):
    flow, std = persist.load_model(args.flow, expect_kind="flow")
    train = _read_csv(cfg, args.csv)
    if args.n_anomalies is not None:
        train = subsample_anomalies(train, args.n_anomalies, RngState(cfg["seed"]).spawn(13))
    if std is None:
        raise ValueError("flow model file carries no standardizer")
    holdout = _read_csv(cfg, args.holdout) if args.holdout else None
    clf = fit_classifier(cfg, flow, std, train, cfg["seed"], holdout=holdout)
    persist.save_model(os.path.join(cfg["out"], "clf.nfad"), clf, std)
    columns = ["epoch", "train_loss"] + (["holdout_loss"] if holdout is not None else [])
    with open(os.path.join(cfg["out"], "clf_history.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for rec in clf.history:
            w.writerow([rec["epoch"]] + [repr(float(rec[c])) for c in columns[1:]])


def cmd_score(args, cfg):
    clf, std = persist.load_model(args.model, expect_kind="classifier")
    data = _read_csv(cfg, args.csv)
    X = data.X if std is None else std.transform(data.X)
    scores = clf_score(clf, X)
    with open(os.path.join(cfg["out"], "scores.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s))])


def cmd_evaluate(args, cfg):
    data = _read_csv(cfg, args.csv)
    rows = read_metrics(args.scores)
    if len(rows) != len(data):
        raise ValueError(f"{args.scores} has {len(rows)} scores for {len(data)} rows")
    scores = np.array([float(r["score"]) for r in rows])
    auc = roc_auc(scores, data.y)
    write_metrics(os.path.join(cfg["out"], "metrics.csv"), [Row(args.run_id, None, cfg["seed"], auc)])


def cmd_density_grid(args, cfg):
    flow, std = persist.load_model(args.flow, expect_kind="flow")
    if flow.d != 2:
        raise ValueError("density-grid needs a 2-D flow")
    x0, x1, y0, y1 = args.bounds
    if std is not None:
        # evaluate in standardized coordinates, report in data units
        lo = std.transform(np.array([[x0, y0]]))[0]
        hi = std.transform(np.array([[x1, y1]]))[0]
        grid = density_grid(flow, (lo[0], hi[0], lo[1], hi[1]), (args.resolution, args.resolution),
                            base_side=args.base_side)
        if not args.base_side:
            grid.logp = grid.logp - float(np.sum(np.log(std.std)))
        grid.bounds = (x0, x1, y0, y1)
    else:
        grid = density_grid(flow, (x0, x1, y0, y1), (args.resolution, args.resolution), base_side=args.base_side)
    grid.to_csv(os.path.join(cfg["out"], "grid.csv"))
    grid.to_pgm(os.path.join(cfg["out"], "grid.pgm"))


def cmd_experiment(args, cfg):
    counts = _int_list(args.anomaly_counts or "0,5,20,100", "anomaly-counts")
    seeds = _int_list(args.seeds, "seeds")
    if cfg["dataset"]["kind"] == "moons" and max(counts) > cfg["dataset"]["n"] // 2:
        raise ConfigError([f"anomaly-counts: {max(counts)} exceeds the available anomalies"])
    rows = experiment(cfg, counts, seeds, out_dir=cfg["out"], method=args.method)
    write_metrics(os.path.join(cfg["out"], "metrics.csv"), rows)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-flow": cmd_train_flow,
    "sample-surrogates": cmd_sample_surrogates,
    "train-clf": cmd_train_clf,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "density-grid": cmd_density_grid,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(cfg["out"], exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"nfad: error: config: {'; '.join(exc.problems)}", file=sys.stderr)
        return EXIT_CONFIG
    except persist.ModelFileError as exc:
        print(f"nfad: error: model: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError, OSError) as exc:
        print(f"nfad: error: runtime: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}",
              file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
