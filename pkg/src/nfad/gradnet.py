"""Small feedforward networks with hand-written reverse-mode gradients.

A :class:`DiffNet` is an ordered list of layers. ``forward`` caches whatever
each layer needs, ``backward`` consumes an upstream sensitivity and returns
parameter gradients (same structure as ``net.params``) plus the input
gradient. Optimizers work on plain lists of arrays so that flows and
classifiers share them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .ndmath import RngState


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: list[np.ndarray] = []
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, g: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}.backward called without a cached forward pass")
        return self._cache


class Linear(Layer):
    kind = "linear"

    def __init__(self, d_in: int, d_out: int, weight=None, bias=None):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        w = np.zeros((d_in, d_out)) if weight is None else np.array(weight, dtype=np.float64)
        b = np.zeros(d_out) if bias is None else np.array(bias, dtype=np.float64)
        if w.shape != (d_in, d_out) or b.shape != (d_out,):
            raise ValueError(f"linear parameter shapes {w.shape}, {b.shape} do not match ({d_in}, {d_out})")
        self.params = [w, b]

    @property
    def weight(self) -> np.ndarray:
        return self.params[0]

    @property
    def bias(self) -> np.ndarray:
        return self.params[1]

    def forward(self, x):
        self._cache = x
        return x @ self.params[0] + self.params[1]

    def backward(self, g):
        x = self._take_cache()
        return [x.T @ g, g.sum(axis=0)], g @ self.params[0].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        out = np.maximum(x, 0.0)
        self._cache = out
        return out

    def backward(self, g):
        # out > 0 exactly where x > 0
        return [], np.where(self._take_cache() > 0, g, 0.0)


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x):
        y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, g):
        y = self._take_cache()
        return [], g * (1.0 - y * y)


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


class Softplus(Layer):
    kind = "softplus"

    def forward(self, x):
        self._cache = x
        return softplus(x)

    def backward(self, g):
        return [], g * sigmoid(self._take_cache())


_ACTIVATIONS = {"relu": ReLU, "tanh": Tanh, "softplus": Softplus}


class DiffNet:
    """Sequential stack of layers with exact gradients."""

    def __init__(self, layers: Sequence[Layer]):
        self.layers = list(layers)
        dims = [(l.d_in, l.d_out) for l in self.layers if isinstance(l, Linear)]
        if not dims:
            raise ValueError("DiffNet needs at least one linear layer")
        for (_, out), (nxt, _) in zip(dims, dims[1:]):
            if out != nxt:
                raise ValueError(f"layer dims do not chain: {out} -> {nxt}")
        self.d_in = dims[0][0]
        self.d_out = dims[-1][1]

    @classmethod
    def mlp(
        cls,
        widths: Sequence[int],
        rng: RngState | None = None,
        activation: str = "relu",
        zero_last: bool = False,
    ) -> "DiffNet":
        """Build ``Linear -> act -> ... -> Linear`` through ``widths``.

        Weights are Glorot-uniform, biases zero. ``zero_last`` zeroes the
        final linear layer so the net outputs exactly zero.
        """
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("widths needs input and output sizes")
        layers: list[Layer] = []
        n_lin = len(widths) - 1
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            last = i == n_lin - 1
            if (last and zero_last) or rng is None:
                w = np.zeros((a, b))
            else:
                lim = math.sqrt(6.0 / (a + b))
                w = (2.0 * rng.uniform((a, b)) - 1.0) * lim
            layers.append(Linear(a, b, weight=w))
            if not last:
                layers.append(_ACTIVATIONS[activation]())
        return cls(layers)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def describe(self) -> list:
        """Architecture descriptor: linear sizes and activation tags in order."""
        return [[l.d_in, l.d_out] if isinstance(l, Linear) else l.kind for l in self.layers]

    @classmethod
    def from_description(cls, desc: list) -> "DiffNet":
        layers = [Linear(*item) if isinstance(item, list) else _ACTIVATIONS[item]() for item in desc]
        return cls(layers)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"expected input of shape (n, {self.d_in}), got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    __call__ = forward

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Return ``(param_grads, input_grad)`` for the cached forward pass."""
        g = np.asarray(upstream, dtype=np.float64)
        grads: list[list[np.ndarray]] = []
        for layer in reversed(self.layers):
            pg, g = layer.backward(g)
            grads.append(pg)
        return [p for pg in reversed(grads) for p in pg], g

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer._cache = None


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample binary cross-entropy from logits and its derivative.

    Uses ``softplus(l) - t*l``, finite for any finite logit.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    loss = softplus(logits) - targets * logits
    return loss, sigmoid(logits) - targets


@dataclass
class OptState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_state(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> OptState:
    return OptState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=0.0)


def adamw_state(lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                weight_decay: float = 0.01) -> OptState:
    return OptState(lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptState) -> list[np.ndarray]:
    """In-place AdamW update; Adam when ``state.weight_decay == 0``.

    Decay multiplies each parameter by ``1 - lr*wd`` before the Adam delta.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient at optimizer step {state.t + 1}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    decay = 1.0 - state.lr * state.weight_decay
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p *= decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_err: float
    worst_param: int
    worst_index: tuple
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def rel_err(a, b, floor: float = 1e-8) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(
    params: list[np.ndarray],
    loss_and_grads: Callable[[], tuple[float, list[np.ndarray]]],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: RngState | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients with central differences over parameters.

    ``loss_and_grads`` must recompute the loss from the current contents of
    ``params`` (they are perturbed in place and restored). Relative errors use
    ``max(|a|, |b|, floor)`` in the denominator so that exact zeros compare sanely.
    ``max_entries`` caps the entries checked per parameter (random subset).
    """
    _, analytic = loss_and_grads()
    analytic = [np.array(g, copy=True) for g in analytic]
    worst = (0.0, -1, ())
    count = 0
    for pi, (p, g) in enumerate(zip(params, analytic)):
        idxs = list(np.ndindex(p.shape))
        if max_entries is not None and len(idxs) > max_entries:
            pick = (rng or RngState(0)).permutation(len(idxs))[:max_entries]
            idxs = [idxs[i] for i in sorted(pick)]
        for idx in idxs:
            old = p[idx]
            p[idx] = old + h
            fp, _ = loss_and_grads()
            p[idx] = old - h
            fm, _ = loss_and_grads()
            p[idx] = old
            fd = (fp - fm) / (2.0 * h)
            err = float(rel_err(g[idx], fd, floor))
            count += 1
            if err > worst[0]:
                worst = (err, pi, idx)
    return GradCheckReport(worst[0], worst[1], worst[2], count)
