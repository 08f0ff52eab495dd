"""How many known anomalies does NFAD need? A small grid on two moons.

Runs NFAD and a plain two-class classifier for each known-anomaly count
and prints mean and std of held-out AUC. Rows are stored under --out, so
an interrupted run picks up where it stopped.

    python demos/anomaly_count_grid.py --out grid-run --seeds 0,1,2
"""

import argparse

from nfad.config import MOONS_PRESET, load_config
from nfad.pipeline import experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="grid-run")
    ap.add_argument("--counts", default="0,5,20,100")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--novel-blob", action="store_true",
                    help="add a test-only anomaly cluster the known anomalies never cover")
    args = ap.parse_args()

    overrides = {}
    if args.novel_blob:
        overrides["dataset.novel_blob"] = {"n": 100, "center": [0.0, 2.5], "sigma": 0.2}
    cfg = load_config(None, overrides, preset=MOONS_PRESET)
    counts = [int(c) for c in args.counts.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]

    cache = {}
    table = {}
    for method in ("nfad", "two-class"):
        use = [c for c in counts if c > 0] if method == "two-class" else counts
        rows = experiment(cfg, use, seeds, out_dir=f"{args.out}/{method}", method=method, flow_cache=cache)
        for r in rows:
            if r.seed is None:
                table.setdefault(r.n_anomalies, {})[method, r.run_id.rsplit("-", 1)[1]] = r.auc

    print(f"{'known':>5}  {'nfad':>13}  {'two-class':>13}")
    for c in counts:
        cells = []
        for method in ("nfad", "two-class"):
            m, s = table[c].get((method, "mean")), table[c].get((method, "std"))
            cells.append("            -" if m is None else f"{m:.3f} ± {s:.3f}")
        print(f"{c:5d}  {cells[0]:>13}  {cells[1]:>13}")


if __name__ == "__main__":
    main()
