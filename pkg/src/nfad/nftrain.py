"""Likelihood training of a flow on normal samples with a Jacobian penalty.

Per minibatch the minimized objective is ``nll + lambda(step) * L_J``, where
``L_J`` is the mean squared forward log-determinant at fresh base draws.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .flows import FlowStack
from .gradnet import OptState, adamw_step
from .ndmath import RngState, std_normal_logpdf

log = logging.getLogger(__name__)


@dataclass
class NfTrainConfig:
    epochs: int = 200
    batch_size: int = 100
    lambda_max: float = 1.0
    ramp_fraction: float = 0.3
    reg_samples: int | None = None
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if not 0.0 <= self.ramp_fraction <= 1.0:
            raise ValueError("ramp_fraction must lie in [0, 1]")
        if self.reg_samples is not None and self.reg_samples < 1:
            raise ValueError("reg_samples must be >= 1")

    @property
    def m(self) -> int:
        return self.reg_samples if self.reg_samples is not None else self.batch_size


@dataclass
class TrainTrace:
    nll: list = field(default_factory=list)
    l_j: list = field(default_factory=list)
    lam: list = field(default_factory=list)

    def __len__(self):
        return len(self.nll)

    def rows(self):
        return [(i + 1, a, b, c) for i, (a, b, c) in enumerate(zip(self.nll, self.l_j, self.lam))]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "nll", "l_j", "lambda"])
            for epoch, a, b, c in self.rows():
                w.writerow([epoch, repr(float(a)), repr(float(b)), repr(float(c))])


def nll_loss(stack: FlowStack, x) -> tuple[float, list[np.ndarray]]:
    """Mean negative log-likelihood of ``x`` and its parameter gradients."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("nll_loss needs a nonempty batch")
    n = x.shape[0]
    z, ld = stack.inverse(x)
    loss = -float(np.mean(std_normal_logpdf(z) + ld))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite negative log-likelihood")
    _, grads = stack.backward(z / n, np.full(n, -1.0 / n))
    return loss, grads


def jac_reg_at(stack: FlowStack, z) -> tuple[float, list[np.ndarray]]:
    """``mean(log|det J(f|z)|^2)`` over the given base points, with gradients."""
    z = np.asarray(z, dtype=np.float64)
    x, ld = stack.forward(z)
    value = float(np.mean(ld * ld))
    _, grads = stack.backward(np.zeros_like(x), 2.0 * ld / z.shape[0])
    return value, grads


def jac_reg(stack: FlowStack, m: int, rng: RngState) -> tuple[float, list[np.ndarray]]:
    """Monte-Carlo Jacobian penalty at ``m`` fresh standard-normal draws."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return jac_reg_at(stack, rng.normal((m, stack.d)))


def lambda_at(step: int, config: NfTrainConfig, total_steps: int) -> float:
    """Linear warm-up of the penalty weight over ``ramp_fraction`` of training."""
    if step < 0:
        raise ValueError("step must be >= 0")
    ramp = config.ramp_fraction * total_steps
    if ramp <= 0:
        return float(config.lambda_max)
    return float(config.lambda_max * min(1.0, step / ramp))


def objective(stack: FlowStack, x, z_reg, lam: float):
    """``nll(x) + lam * L_J(z_reg)`` and its gradients; also returns both parts."""
    nll, g_nll = nll_loss(stack, x)
    if lam > 0:
        lj, g_lj = jac_reg_at(stack, z_reg)
        grads = [a + lam * b for a, b in zip(g_nll, g_lj)]
    else:
        # the penalty value is still tracked for diagnostics
        lj = float(np.mean(stack.forward(z_reg)[1] ** 2))
        grads = g_nll
    return nll + lam * lj, grads, nll, lj


def _check_data(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("normal data must be a nonempty (n, d) array")
    if not np.all(np.isfinite(x)):
        raise ValueError("normal data contains non-finite values")
    if x.shape[0] > 1:
        flat = np.flatnonzero(x.std(axis=0) == 0)
        if flat.size:
            raise ValueError(f"constant feature(s) {flat.tolist()} in normal data; cannot train a flow on them")
    return x


def train_flow(normal_data, stack: FlowStack, config: NfTrainConfig) -> tuple[FlowStack, TrainTrace]:
    """Fit ``stack`` in place to ``normal_data``; returns ``(stack, trace)``."""
    x = _check_data(normal_data)
    if x.shape[1] != stack.d:
        raise ValueError(f"data has {x.shape[1]} features, flow has {stack.d}")
    rng = RngState(config.seed)
    shuffle_rng = rng.spawn(1)
    reg_rng = rng.spawn(2)
    n = x.shape[0]
    n_batches = -(-n // config.batch_size)
    total = config.epochs * n_batches
    state = OptState(lr=config.lr, weight_decay=config.weight_decay)
    trace = TrainTrace()
    params = stack.params
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        sum_nll = sum_lj = 0.0
        lam = 0.0
        for b in range(n_batches):
            batch = x[order[b * config.batch_size:(b + 1) * config.batch_size]]
            lam = lambda_at(step, config, total)
            z_reg = reg_rng.normal((config.m, stack.d))
            try:
                loss, grads, nll, lj = objective(stack, batch, z_reg, lam)
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite objective")
                adamw_step(params, grads, state)
            except FloatingPointError as exc:
                raise FloatingPointError(f"flow training diverged at epoch {epoch}, step {step}: {exc}") from exc
            sum_nll += nll
            sum_lj += lj
            step += 1
        trace.nll.append(sum_nll / n_batches)
        trace.l_j.append(sum_lj / n_batches)
        trace.lam.append(lam)
        log.debug("epoch %d nll %.4f l_j %.4f lambda %.3f", epoch, trace.nll[-1], trace.l_j[-1], lam)
    return stack, trace


def config_dict(config: NfTrainConfig) -> dict:
    return asdict(config)
