"""Normal-vs-anomaly classifier trained on real and surrogate anomalies.

The network outputs the logit of P(normal | x). Each step minimizes

    -[w_pos * mean log g(X+) + w_neg * mean log(1 - g(X-)) + w_sur * mean log(1 - g(X~))]

where X~ are fresh surrogates from the flow's latent tail and the X- term
vanishes when no real anomalies are known.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .gradnet import DiffNet, OptState, adamw_step, bce_with_logits, sigmoid
from .ndmath import RngState
from .tailgen import TailSpec, gen_surrogates

log = logging.getLogger(__name__)


class MlpClassifier:
    """``D -> 3D -> 2D -> 1`` ReLU network producing a normality logit."""

    def __init__(self, d: int, rng: RngState | None = None, net: DiffNet | None = None):
        self.d = int(d)
        self.net = net if net is not None else DiffNet.mlp([d, 3 * d, 2 * d, 1], rng=rng)
        if self.net.describe() != DiffNet.mlp([d, 3 * d, 2 * d, 1]).describe():
            raise ValueError("classifier network must follow the D/3D/2D/1 layout")
        self.history: list[dict] = []

    @property
    def params(self):
        return self.net.params

    def logits(self, X) -> np.ndarray:
        return self.net.forward(np.asarray(X, dtype=np.float64))[:, 0]


def clf_score(clf: MlpClassifier, X) -> np.ndarray:
    """Probability of being normal; anomaly score is ``1 - score``."""
    return sigmoid(clf.logits(X))


@dataclass
class ClfTrainConfig:
    epochs: int = 10
    batch_size: int = 100
    surrogates_per_batch: int | None = None
    anomalies_per_batch: int | None = None
    lr: float = 1e-3
    weight_decay: float = 0.01
    weights: str | tuple = "balanced"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if isinstance(self.weights, str):
            if self.weights not in ("balanced", "unit"):
                raise ValueError("weights must be 'balanced', 'unit' or a (w_pos, w_neg, w_sur) triple")
        else:
            self.weights = tuple(float(w) for w in self.weights)
            if len(self.weights) != 3 or min(self.weights) <= 0:
                raise ValueError("explicit weights must be three positive numbers")

    @property
    def n_sur(self) -> int:
        return self.surrogates_per_batch if self.surrogates_per_batch is not None else self.batch_size

    @property
    def n_anom(self) -> int:
        return self.anomalies_per_batch if self.anomalies_per_batch is not None else self.batch_size


def term_weights(weights, n_neg: int, n_sur: int) -> tuple[float, float, float]:
    """Resolve the ``(w_pos, w_neg, w_sur)`` triple for one batch.

    ``balanced`` gives the normal side weight 1 and splits weight 1 between
    real and surrogate anomalies in proportion to their batch counts.
    """
    if weights == "unit":
        return 1.0, 1.0, 1.0
    if weights == "balanced":
        total = n_neg + n_sur
        if total == 0:
            return 1.0, 0.0, 0.0
        return 1.0, n_neg / total, n_sur / total
    return tuple(weights)


def clf_loss(clf: MlpClassifier, X_pos, X_neg, X_sur, weights=(1.0, 1.0, 1.0)) -> tuple[float, list]:
    """Weighted three-term cross-entropy and its parameter gradients.

    Empty ``X_neg`` or ``X_sur`` drop their term entirely.
    """
    X_pos = np.asarray(X_pos, dtype=np.float64)
    if X_pos.shape[0] == 0:
        raise ValueError("need at least one normal sample")
    groups = [(X_pos, 1.0, weights[0])]
    for X, w in ((X_neg, weights[1]), (X_sur, weights[2])):
        if X is not None and len(X):
            groups.append((np.asarray(X, dtype=np.float64), 0.0, w))
    X = np.vstack([g[0] for g in groups])
    targets = np.concatenate([np.full(g[0].shape[0], g[1]) for g in groups])
    per = np.concatenate([np.full(g[0].shape[0], g[2] / g[0].shape[0]) for g in groups])
    logits = clf.net.forward(X)[:, 0]
    bce, dlogit = bce_with_logits(logits, targets)
    loss = float(np.sum(per * bce))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite classifier loss")
    grads, _ = clf.net.backward((per * dlogit)[:, None])
    return loss, grads


def clf_step(clf: MlpClassifier, X_pos, X_neg, X_sur, config: ClfTrainConfig, state: OptState) -> float:
    """One optimizer step on the three-term objective; returns the loss."""
    n_neg = 0 if X_neg is None else len(X_neg)
    n_sur = 0 if X_sur is None else len(X_sur)
    w = term_weights(config.weights, n_neg, n_sur)
    loss, grads = clf_loss(clf, X_pos, X_neg, X_sur, w)
    adamw_step(clf.params, grads, state)
    return loss


def train_classifier(flow, normal, anomalies, tail_spec: TailSpec | None, config: ClfTrainConfig,
                     holdout=None) -> MlpClassifier:
    """Second stage: fit a classifier on normals vs real and surrogate anomalies.

    ``flow=None`` trains a plain two-class classifier without surrogates.
    Each epoch walks once over the shuffled normal data; every step draws
    fresh surrogates and a with-replacement minibatch of known anomalies.
    ``holdout=(X, y)`` logs a held-out loss per epoch in ``clf.history``.
    """
    normal = np.asarray(normal, dtype=np.float64)
    if normal.ndim != 2 or normal.shape[0] == 0:
        raise ValueError("normal data must be a nonempty (n, d) array")
    anomalies = np.empty((0, normal.shape[1])) if anomalies is None else np.asarray(anomalies, dtype=np.float64)
    if flow is None and anomalies.shape[0] == 0:
        raise ValueError("without a flow there must be known anomalies to train against")
    rng = RngState(config.seed)
    clf = MlpClassifier(normal.shape[1], rng=rng.spawn(0))
    shuffle_rng, anom_rng, tail_rng = rng.spawn(1), rng.spawn(2), rng.spawn(3)
    state = OptState(lr=config.lr, weight_decay=config.weight_decay)
    n = normal.shape[0]
    n_batches = -(-n // config.batch_size)
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b in range(n_batches):
            X_pos = normal[order[b * config.batch_size:(b + 1) * config.batch_size]]
            X_neg = None
            if anomalies.shape[0]:
                X_neg = anomalies[anom_rng.integers(anomalies.shape[0], config.n_anom)]
            X_sur = None
            if flow is not None:
                X_sur = gen_surrogates(flow, tail_spec, config.n_sur, tail_rng)
            try:
                total += clf_step(clf, X_pos, X_neg, X_sur, config, state)
            except FloatingPointError as exc:
                raise FloatingPointError(f"classifier training diverged at epoch {epoch}, step {b}: {exc}") from exc
        record = {"epoch": epoch, "train_loss": total / n_batches}
        if holdout is not None:
            record["holdout_loss"] = holdout_loss(clf, *holdout)
        clf.history.append(record)
        log.debug("classifier epoch %s", record)
    return clf


def holdout_loss(clf: MlpClassifier, X, y) -> float:
    """Unweighted mean cross-entropy against labels (1 = normal)."""
    bce, _ = bce_with_logits(clf.logits(X), np.asarray(y, dtype=np.float64))
    return float(bce.mean())
