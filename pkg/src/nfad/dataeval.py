"""Datasets, preprocessing, ROC AUC and density-grid export.

Label convention: ``NORMAL = 1`` is the positive class and classifier scores
are probabilities of being normal, so a higher score means "more normal".
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .ndmath import RngState, std_normal_logpdf

NORMAL = 1
ANOMALY = 0


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-D")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError(f"{self.y.size} labels for {self.X.shape[0]} rows")
        if not np.all(np.isin(self.y, (NORMAL, ANOMALY))):
            raise ValueError("labels must be NORMAL (1) or ANOMALY (0)")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]

    def __len__(self):
        return self.X.shape[0]

    @property
    def normals(self) -> np.ndarray:
        return self.X[self.y == NORMAL]

    @property
    def anomalies(self) -> np.ndarray:
        return self.X[self.y == ANOMALY]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.X[idx], self.y[idx], list(self.feature_names))

    def to_csv(self, path, label_column: str = "label") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.feature_names, label_column])
            for row, lab in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + ["normal" if lab == NORMAL else "anomaly"])


def concat(*parts: LabeledDataset) -> LabeledDataset:
    return LabeledDataset(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                          list(parts[0].feature_names))


def moon_upper(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def moon_lower(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=-1)


def make_moons(n: int, noise_sigma: float, rng: RngState) -> LabeledDataset:
    """Two interleaved half circles; the upper moon is normal, the lower one anomalous."""
    if n < 2:
        raise ValueError("make_moons needs n >= 2")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    n_a = (n + 1) // 2
    n_b = n // 2
    t = rng.uniform(n) * math.pi
    X = np.vstack([moon_upper(t[:n_a]), moon_lower(t[n_a:])])
    if noise_sigma > 0:
        X = X + noise_sigma * rng.normal(X.shape)
    y = np.concatenate([np.full(n_a, NORMAL), np.full(n_b, ANOMALY)])
    return LabeledDataset(X, y)


def make_blob(n: int, center, sigma: float, rng: RngState, label: int = ANOMALY) -> LabeledDataset:
    """Isotropic Gaussian cluster, by default labeled as anomalies."""
    center = np.asarray(center, dtype=np.float64)
    X = center + sigma * rng.normal((n, center.size))
    return LabeledDataset(X, np.full(n, label))


def ingest_csv(path, label_column: str, label_map: dict) -> LabeledDataset:
    """Read a headed numeric CSV; ``label_map`` maps raw label strings to NORMAL/ANOMALY."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise ValueError(f"{path}: missing label column {label_column!r}")
    li = header.index(label_column)
    feats = [h for i, h in enumerate(header) if i != li]
    body = [r for r in rows[1:] if r]
    if not body:
        raise ValueError(f"{path}: no data rows")
    X = np.empty((len(body), len(feats)))
    y = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        raw = row[li].strip()
        if raw not in label_map:
            raise ValueError(f"{path}: row {r}: label value {raw!r} not in label map")
        y[r - 2] = label_map[raw]
        j = 0
        for i, cell in enumerate(row):
            if i == li:
                continue
            try:
                X[r - 2, j] = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {r}, column {header[i]!r}: non-numeric value {cell!r}") from None
            j += 1
    return LabeledDataset(X, y, feats)


DEFAULT_LABEL_MAP = {"normal": NORMAL, "anomaly": ANOMALY, "1": NORMAL, "0": ANOMALY}


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        if X.shape[0] < 2:
            raise ValueError("need at least two rows to fit a standardizer")
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        bad = np.flatnonzero(~(std > 0))
        if bad.size:
            raise ValueError(f"constant feature(s) at column(s) {bad.tolist()}")
        return cls(mean, std)

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, X):
        return np.asarray(X, dtype=np.float64) * self.std + self.mean


def roc_auc(scores, labels) -> float:
    """P(normal score > anomaly score) with ties counted one half.

    Mann-Whitney rank sum with midranks, computed on doubled integer ranks so
    the result is an exact ratio of integers.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == NORMAL
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both normal and anomalous samples")
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    # group boundaries of tied runs
    starts = np.flatnonzero(np.concatenate([[True], s[1:] != s[:-1]]))
    ends = np.concatenate([starts[1:], [s.size]])
    # (a + 1) + b: sum of the 1-based first and last rank of a tied run
    twice_rank = np.repeat(starts + ends + 1, ends - starts).astype(np.int64)
    twice_r_pos = int(twice_rank[pos[order]].sum())
    num = twice_r_pos - n_pos * (n_pos + 1)
    return num / (2 * n_pos * n_neg)


def split(dataset: LabeledDataset, fractions, rng: RngState, stratify: bool = False):
    """Shuffle and cut into parts of size ``floor(f*n)``; the last part takes the remainder."""
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be nonnegative and sum to 1")
    if stratify:
        groups = [np.flatnonzero(dataset.y == lab) for lab in (NORMAL, ANOMALY)]
    else:
        groups = [np.arange(len(dataset))]
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    for g in groups:
        g = g[rng.permutation(g.size)]
        start = 0
        for i, f in enumerate(fractions):
            stop = g.size if i == len(fractions) - 1 else start + int(math.floor(f * g.size + 1e-9))
            parts[i].append(g[start:stop])
            start = stop
    return [dataset.subset(np.sort(np.concatenate(p))) for p in parts]


def subsample_anomalies(dataset: LabeledDataset, k: int, rng: RngState) -> LabeledDataset:
    """Keep every normal row and exactly ``k`` randomly chosen anomalies."""
    anom = np.flatnonzero(dataset.y == ANOMALY)
    if k < 0 or k > anom.size:
        raise ValueError(f"cannot keep {k} anomalies, only {anom.size} available")
    keep = anom[rng.permutation(anom.size)[:k]]
    idx = np.sort(np.concatenate([np.flatnonzero(dataset.y == NORMAL), keep]))
    return dataset.subset(idx)


@dataclass
class DensityGrid:
    """Log-density on a regular grid of cell centers; ``logp[i, j]`` at ``(xs[j], ys[i])``."""

    bounds: tuple
    resolution: tuple
    logp: np.ndarray

    @property
    def xs(self):
        return _centers(self.bounds[0], self.bounds[1], self.resolution[0])

    @property
    def ys(self):
        return _centers(self.bounds[2], self.bounds[3], self.resolution[1])

    @property
    def cell_area(self) -> float:
        x0, x1, y0, y1 = self.bounds
        return (x1 - x0) / self.resolution[0] * (y1 - y0) / self.resolution[1]

    def mass(self) -> float:
        return float(np.exp(self.logp).sum() * self.cell_area)

    def to_csv(self, path) -> None:
        xs, ys = self.xs, self.ys
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "logp"])
            for i, yv in enumerate(ys):
                for j, xv in enumerate(xs):
                    w.writerow([repr(float(xv)), repr(float(yv)), repr(float(self.logp[i, j]))])

    def to_pgm(self, path, span: float = 10.0) -> None:
        """Write a plain (P2) grayscale heatmap, top row = largest y.

        Gray level 255 is the maximum log-density on the grid and 0 is
        ``max - span``; values below are clamped to 0.
        """
        hi = float(np.max(self.logp))
        lo = hi - span
        gray = np.clip(np.round((self.logp - lo) / span * 255.0), 0, 255).astype(int)[::-1]
        with open(path, "w") as fh:
            fh.write(f"P2\n{gray.shape[1]} {gray.shape[0]}\n255\n")
            for row in gray:
                fh.write(" ".join(str(v) for v in row) + "\n")


def _centers(lo, hi, n):
    step = (hi - lo) / n
    return lo + step * (np.arange(n) + 0.5)


def density_grid(stack, bounds=(-8.0, 8.0, -8.0, 8.0), resolution=(800, 800), base_side: bool = False,
                 chunk: int = 20000) -> DensityGrid:
    """Evaluate ``log p_f`` (or, with ``base_side``, ``log p(f^-1(x))``) on a 2-D grid."""
    if stack.d != 2:
        raise ValueError("density grids need a 2-D flow")
    resolution = (int(resolution[0]), int(resolution[1]))
    bounds = tuple(float(b) for b in bounds)
    g = DensityGrid(bounds, resolution, np.empty((resolution[1], resolution[0])))
    gx, gy = np.meshgrid(g.xs, g.ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    out = np.empty(pts.shape[0])
    for a in range(0, pts.shape[0], chunk):
        z, ld = stack.inverse(pts[a:a + chunk])
        out[a:a + chunk] = std_normal_logpdf(z) + (0.0 if base_side else ld)
    g.logp = out.reshape(resolution[1], resolution[0])
    return g
