"""Invertible coupling flows with analytic log-determinants.

Direction convention: ``forward`` maps latent ``z`` to data ``x`` and
returns ``log|det dx/dz|``; ``inverse`` maps ``x`` to ``z`` and returns
``log|det dz/dx|``. Every layer caches its most recent call so that
``backward(g_out, g_logdet)`` can propagate sensitivities of a scalar loss
through whichever direction was evaluated last.
"""

from __future__ import annotations

import math

import numpy as np

from .gradnet import DiffNet, sigmoid, softplus
from .ndmath import RngState, std_normal_logpdf

S_MAX = 3.0
DEFAULT_BINS = 8
DEFAULT_BOUND = 4.0
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3


def _require_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


def alternating_mask(d: int, index: int) -> np.ndarray:
    """Passive-coordinate mask for coupling ``index`` (1 = copied through)."""
    if d == 1:
        return np.zeros(1, dtype=bool)
    return (np.arange(d) + index) % 2 == 0


class FlowLayer:
    kind = "layer"
    d: int

    @property
    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, z):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def backward(self, g_out, g_logdet):
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


class Permutation(FlowLayer):
    kind = "permutation"

    def __init__(self, perm):
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise ValueError(f"not a permutation of 0..{perm.size - 1}: {perm.tolist()}")
        self.perm = perm
        self.inv = np.argsort(perm)
        self.d = perm.size
        self._dir = None

    def forward(self, z):
        self._dir = "fwd"
        return z[:, self.perm], np.zeros(z.shape[0])

    def inverse(self, x):
        self._dir = "inv"
        return x[:, self.inv], np.zeros(x.shape[0])

    def backward(self, g_out, g_logdet):
        if self._dir is None:
            raise RuntimeError("permutation backward without a cached pass")
        g_in = g_out[:, self.inv] if self._dir == "fwd" else g_out[:, self.perm]
        return g_in, []

    def describe(self):
        return {"kind": self.kind, "perm": self.perm.tolist()}


class Coupling(FlowLayer):
    """Shared plumbing: mask bookkeeping and the conditioner network."""

    def __init__(self, mask, conditioner: DiffNet):
        mask = np.asarray(mask, dtype=bool)
        self.d = mask.size
        self.mask = mask
        self.passive = np.flatnonzero(mask)
        self.active = np.flatnonzero(~mask)
        if self.active.size == 0:
            raise ValueError("coupling needs at least one active dimension")
        if self.passive.size == 0 and self.d > 1:
            raise ValueError("coupling needs at least one passive dimension when d > 1")
        if conditioner.d_in != self.passive.size or conditioner.d_out != self.n_cond_out:
            raise ValueError(
                f"conditioner maps {conditioner.d_in}->{conditioner.d_out}, "
                f"layer needs {self.passive.size}->{self.n_cond_out}"
            )
        self.conditioner = conditioner
        self._cache = None

    @property
    def n_cond_out(self) -> int:
        raise NotImplementedError

    @property
    def params(self):
        return self.conditioner.params

    def _condition(self, passive_vals):
        h = self.conditioner.forward(passive_vals)
        _require_finite(h, f"{self.kind} conditioner output")
        return h

    def _finish_backward(self, g_passive_direct, g_active_in, g_h):
        grads, g_cond_in = self.conditioner.backward(g_h)
        g_in = np.empty((g_h.shape[0], self.d))
        g_in[:, self.passive] = g_passive_direct + g_cond_in
        g_in[:, self.active] = g_active_in
        return g_in, grads

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind} backward without a cached pass")
        return self._cache


class AffineCoupling(Coupling):
    """``x_a = z_a * exp(s) + t`` with ``s = s_max * tanh(s_raw / s_max)``."""

    kind = "affine"

    def __init__(self, mask, conditioner: DiffNet, s_max: float = S_MAX):
        self.s_max = float(s_max)
        super().__init__(mask, conditioner)

    @property
    def n_cond_out(self):
        return 2 * int((~np.asarray(self.mask)).sum())

    def _scale_shift(self, h):
        k = self.active.size
        th = np.tanh(h[:, :k] / self.s_max)
        return self.s_max * th, h[:, k:], th

    def forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        _require_finite(z, "affine input")
        s, t, th = self._scale_shift(self._condition(z[:, self.passive]))
        za = z[:, self.active]
        es = np.exp(s)
        x = z.copy()
        x[:, self.active] = za * es + t
        self._cache = ("fwd", za, es, th)
        return x, s.sum(axis=1)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        _require_finite(x, "affine input")
        s, t, th = self._scale_shift(self._condition(x[:, self.passive]))
        e = np.exp(-s)
        za = (x[:, self.active] - t) * e
        z = x.copy()
        z[:, self.active] = za
        self._cache = ("inv", za, e, th)
        return z, -s.sum(axis=1)

    def backward(self, g_out, g_logdet):
        direction, za, e, th = self._take_cache()
        ga = g_out[:, self.active]
        gl = g_logdet[:, None]
        if direction == "fwd":
            g_active_in = ga * e
            g_s = ga * za * e + gl
            g_t = ga
        else:
            g_active_in = ga * e
            g_s = -ga * za - gl
            g_t = -ga * e
        g_h = np.concatenate([g_s * (1.0 - th * th), g_t], axis=1)
        return self._finish_backward(g_out[:, self.passive], g_active_in, g_h)

    def describe(self):
        return {"kind": self.kind, "mask": self.mask.astype(int).tolist(), "s_max": self.s_max,
                "conditioner": self.conditioner.describe()}


_DERIV_SHIFT = math.log(math.expm1(1.0 - MIN_DERIVATIVE))


class RQSCoupling(Coupling):
    """Monotone rational-quadratic spline on ``[-B, B]``, identity outside.

    Per active dimension the conditioner emits ``3K - 1`` raw values: K bin
    widths, K bin heights (softmax, scaled to ``2B``) and ``K - 1`` interior
    knot derivatives (shifted softplus, equal to 1 at raw 0). Boundary
    derivatives are 1 so the map joins the identity tails smoothly.
    """

    kind = "rqs"

    def __init__(self, mask, conditioner: DiffNet, bins: int = DEFAULT_BINS, bound: float = DEFAULT_BOUND):
        self.bins = int(bins)
        self.bound = float(bound)
        if self.bins < 1 or self.bound <= 0:
            raise ValueError("rqs needs bins >= 1 and bound > 0")
        super().__init__(mask, conditioner)

    @property
    def n_cond_out(self):
        return int((~np.asarray(self.mask)).sum()) * (3 * self.bins - 1)

    def _spline_params(self, h):
        n, k, K, B = h.shape[0], self.active.size, self.bins, self.bound
        raw = h.reshape(n, k, 3 * K - 1)
        sm_w = _softmax(raw[..., :K])
        sm_h = _softmax(raw[..., K:2 * K])
        scale = 2.0 * B * (1.0 - K * MIN_BIN_WIDTH)
        widths = 2.0 * B * MIN_BIN_WIDTH + scale * sm_w
        heights = 2.0 * B * MIN_BIN_HEIGHT + 2.0 * B * (1.0 - K * MIN_BIN_HEIGHT) * sm_h
        d_arg = raw[..., 2 * K:] + _DERIV_SHIFT
        derivs = np.ones((n, k, K + 1))
        derivs[..., 1:K] = MIN_DERIVATIVE + softplus(d_arg)
        cx = _knots(widths, B)
        cy = _knots(heights, B)
        return dict(sm_w=sm_w, sm_h=sm_h, widths=widths, heights=heights, derivs=derivs,
                    d_arg=d_arg, cx=cx, cy=cy)

    def _gather(self, sp, idx):
        pick = idx[..., None]
        take = lambda a: np.take_along_axis(a, pick, axis=-1)[..., 0]
        return (take(sp["cx"]), take(sp["widths"]), take(sp["cy"]), take(sp["heights"]),
                take(sp["derivs"]), np.take_along_axis(sp["derivs"], pick + 1, axis=-1)[..., 0])

    def forward(self, z):
        z = np.asarray(z, dtype=np.float64)
        _require_finite(z, "rqs input")
        sp = self._spline_params(self._condition(z[:, self.passive]))
        u = z[:, self.active]
        inside = np.abs(u) <= self.bound
        u_in = np.where(inside, u, 0.0)
        idx = _bin_index(sp["cx"], u_in)
        xk, wk, yk, hk, dk, dk1 = self._gather(sp, idx)
        xi = np.clip((u_in - xk) / wk, 0.0, 1.0)
        ev = _rqs_eval(xi, wk, yk, hk, dk, dk1)
        assert np.all(ev["der"][inside] > 0), "spline derivative must be positive"
        x = z.copy()
        x[:, self.active] = np.where(inside, ev["y"], u)
        logdet = np.where(inside, ev["L"], 0.0)
        self._cache = ("fwd", sp, idx, inside, ev)
        return x, logdet.sum(axis=1)

    def inverse(self, x):
        x = np.asarray(x, dtype=np.float64)
        _require_finite(x, "rqs input")
        sp = self._spline_params(self._condition(x[:, self.passive]))
        v = x[:, self.active]
        inside = np.abs(v) <= self.bound
        v_in = np.where(inside, v, 0.0)
        idx = _bin_index(sp["cy"], v_in)
        xk, wk, yk, hk, dk, dk1 = self._gather(sp, idx)
        s = hk / wk
        dy = v_in - yk
        beta = dk1 + dk - 2.0 * s
        qa = hk * (s - dk) + dy * beta
        qb = hk * dk - dy * beta
        qc = -s * dy
        disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
        xi = np.clip(2.0 * qc / (-qb - np.sqrt(disc)), 0.0, 1.0)
        ev = _rqs_eval(xi, wk, yk, hk, dk, dk1)
        assert np.all(ev["der"][inside] > 0), "spline derivative must be positive"
        z = x.copy()
        z[:, self.active] = np.where(inside, xk + xi * wk, v)
        logdet = np.where(inside, -ev["L"], 0.0)
        self._cache = ("inv", sp, idx, inside, ev)
        return z, logdet.sum(axis=1)

    def backward(self, g_out, g_logdet):
        direction, sp, idx, inside, ev = self._take_cache()
        ga = g_out[:, self.active]
        gl = np.broadcast_to(g_logdet[:, None], ga.shape)
        der, L_u = ev["der"], ev["L_u"]
        if direction == "fwd":
            coef_y, coef_L = ga, gl
            g_in_in = ga * der + gl * L_u
        else:
            g_in_in = (ga - gl * L_u) / der
            coef_y, coef_L = -g_in_in, -gl
        coef_y = np.where(inside, coef_y, 0.0)
        coef_L = np.where(inside, coef_L, 0.0)
        g_active_in = np.where(inside, g_in_in, ga)
        g_h = self._raw_grad(sp, idx, ev, coef_y, coef_L)
        return self._finish_backward(g_out[:, self.passive], g_active_in, g_h)

    def _raw_grad(self, sp, idx, ev, cy_, cl_):
        """Pull ``cy_ * dy/dtheta + cl_ * dL/dtheta`` back to raw conditioner outputs."""
        n, k = idx.shape
        K, B = self.bins, self.bound
        part = {v: cy_ * ev["y_" + v] + cl_ * ev["L_" + v] for v in ("xk", "wk", "yk", "hk", "dk", "dk1")}
        ar = np.arange(K)
        onehot = ar == idx[..., None]
        lower = ar < idx[..., None]
        g_widths = onehot * part["wk"][..., None] + lower * part["xk"][..., None]
        g_heights = onehot * part["hk"][..., None] + lower * part["yk"][..., None]
        ar1 = np.arange(K + 1)
        g_derivs = ((ar1 == idx[..., None]) * part["dk"][..., None]
                    + (ar1 == idx[..., None] + 1) * part["dk1"][..., None])
        g_raw = np.empty((n, k, 3 * K - 1))
        g_raw[..., :K] = _softmax_vjp(sp["sm_w"], g_widths * 2.0 * B * (1.0 - K * MIN_BIN_WIDTH))
        g_raw[..., K:2 * K] = _softmax_vjp(sp["sm_h"], g_heights * 2.0 * B * (1.0 - K * MIN_BIN_HEIGHT))
        g_raw[..., 2 * K:] = g_derivs[..., 1:K] * sigmoid(sp["d_arg"])
        return g_raw.reshape(n, k * (3 * K - 1))

    def describe(self):
        return {"kind": self.kind, "mask": self.mask.astype(int).tolist(), "bins": self.bins,
                "bound": self.bound, "conditioner": self.conditioner.describe()}


def _softmax(a):
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_vjp(sm, g):
    return sm * (g - np.sum(g * sm, axis=-1, keepdims=True))


def _knots(sizes, bound):
    knots = np.empty(sizes.shape[:-1] + (sizes.shape[-1] + 1,))
    knots[..., 0] = -bound
    knots[..., 1:] = -bound + np.cumsum(sizes, axis=-1)
    knots[..., -1] = bound
    return knots


def _bin_index(knots, u):
    return (u[..., None] >= knots[..., 1:-1]).sum(axis=-1)


def _rqs_eval(xi, wk, yk, hk, dk, dk1):
    """Spline value, log-derivative and their partials w.r.t. bin quantities.

    The input coordinate is ``u = xk + xi * wk``; partials named ``*_u`` are
    with respect to it.
    """
    s = hk / wk
    q = xi * (1.0 - xi)
    one_m = 1.0 - xi
    beta = dk1 + dk - 2.0 * s
    den = s + beta * q
    # written as s + correction so that the identity spline (s = dk = dk1 = 1) is exact
    A = s * xi + (dk - s) * q
    N = s + (dk1 - s) * xi * xi + (dk - s) * one_m * one_m
    den2 = den * den
    y = yk + hk * A / den
    der = s * s * N / den2
    L = 2.0 * np.log(s) + np.log(N) - 2.0 * np.log(den)

    den_xi = beta * (1.0 - 2.0 * xi)
    y_xi = der * wk
    y_s = hk * (xi * xi * den - A * (1.0 - 2.0 * q)) / den2
    y_dk = hk * q * (den - A) / den2
    y_dk1 = -hk * A * q / den2
    N_xi = 2.0 * dk1 * xi + 2.0 * s * (1.0 - 2.0 * xi) - 2.0 * dk * one_m
    L_xi = N_xi / N - 2.0 * den_xi / den
    L_s = 2.0 / s + 2.0 * q / N - 2.0 * (1.0 - 2.0 * q) / den
    L_dk = one_m * one_m / N - 2.0 * q / den
    L_dk1 = xi * xi / N - 2.0 * q / den

    out = dict(y=y, L=L, der=der)
    for name, F_xi, F_s, F_h, F_yk, F_dk, F_dk1 in (
        ("y", y_xi, y_s, A / den, 1.0, y_dk, y_dk1),
        ("L", L_xi, L_s, 0.0, 0.0, L_dk, L_dk1),
    ):
        out[name + "_u"] = F_xi / wk
        out[name + "_xk"] = -F_xi / wk
        out[name + "_wk"] = -(F_xi * xi + F_s * s) / wk
        out[name + "_hk"] = F_h + F_s / wk
        out[name + "_yk"] = np.broadcast_to(F_yk, xi.shape)
        out[name + "_dk"] = F_dk
        out[name + "_dk1"] = F_dk1
    return out


_LAYER_KINDS = {"affine": AffineCoupling, "rqs": RQSCoupling}


class FlowStack:
    """Ordered composition ``f = f_N o ... o f_1`` over ``d`` dimensions."""

    def __init__(self, layers, d: int):
        self.layers = list(layers)
        self.d = int(d)
        for layer in self.layers:
            if layer.d != self.d:
                raise ValueError(f"layer dimension {layer.d} does not match stack dimension {self.d}")
        self._dir = None

    @classmethod
    def build(
        cls,
        d: int,
        n_layers: int = 6,
        kind: str = "rqs",
        hidden=(64, 64),
        rng: RngState | None = None,
        zero_init: bool = True,
        bins: int = DEFAULT_BINS,
        bound: float = DEFAULT_BOUND,
        s_max: float = S_MAX,
    ) -> "FlowStack":
        """Alternating-mask coupling stack.

        With ``zero_init`` every conditioner's last layer is zero, so the
        stack is exactly the identity map.
        """
        if kind not in _LAYER_KINDS:
            raise ValueError(f"unknown coupling kind {kind!r}")
        rng = rng if rng is not None else RngState(0)
        layers = []
        for i in range(n_layers):
            mask = alternating_mask(d, i)
            n_out = int((~mask).sum()) * (2 if kind == "affine" else 3 * bins - 1)
            widths = [int(mask.sum()), *hidden, n_out]
            cond = DiffNet.mlp(widths, rng=rng, zero_last=zero_init)
            if kind == "affine":
                layers.append(AffineCoupling(mask, cond, s_max=s_max))
            else:
                layers.append(RQSCoupling(mask, cond, bins=bins, bound=bound))
        return cls(layers, d)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def _check(self, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.d:
            raise ValueError(f"expected array of shape (n, {self.d}), got {a.shape}")
        return a

    def forward(self, z):
        """``(x, log|det dx/dz|)``."""
        x = self._check(z)
        total = np.zeros(x.shape[0])
        for layer in self.layers:
            x, ld = layer.forward(x)
            total += ld
        self._dir = "fwd"
        return x, total

    def inverse(self, x):
        """``(z, log|det dz/dx|)``."""
        z = self._check(x)
        total = np.zeros(z.shape[0])
        for layer in reversed(self.layers):
            z, ld = layer.inverse(z)
            total += ld
        self._dir = "inv"
        return z, total

    def backward(self, g_out, g_logdet):
        """Propagate through the last evaluated direction.

        Returns ``(g_in, param_grads)`` with ``param_grads`` aligned to ``params``.
        """
        if self._dir is None:
            raise RuntimeError("FlowStack.backward without a cached pass")
        g = np.asarray(g_out, dtype=np.float64)
        gl = np.asarray(g_logdet, dtype=np.float64) * np.ones(g.shape[0])
        order = self.layers[::-1] if self._dir == "fwd" else self.layers
        per_layer = {}
        for layer in order:
            g, grads = layer.backward(g, gl)
            per_layer[id(layer)] = grads
        return g, [p for layer in self.layers for p in per_layer[id(layer)]]

    def logprob(self, x):
        z, ld = self.inverse(x)
        return std_normal_logpdf(z) + ld

    def sample(self, z):
        return self.forward(z)[0]

    def describe(self) -> dict:
        return {"d": self.d, "layers": [layer.describe() for layer in self.layers]}

    @classmethod
    def from_description(cls, desc: dict) -> "FlowStack":
        layers = []
        for ld in desc["layers"]:
            if ld["kind"] == "permutation":
                layers.append(Permutation(ld["perm"]))
                continue
            cond = DiffNet.from_description(ld["conditioner"])
            if ld["kind"] == "affine":
                layers.append(AffineCoupling(ld["mask"], cond, s_max=ld["s_max"]))
            elif ld["kind"] == "rqs":
                layers.append(RQSCoupling(ld["mask"], cond, bins=ld["bins"], bound=ld["bound"]))
            else:
                raise ValueError(f"unknown layer kind {ld['kind']!r}")
        return cls(layers, desc["d"])


def stack_logprob(stack: FlowStack, x) -> np.ndarray:
    return stack.logprob(x)


def stack_sample(stack: FlowStack, z) -> np.ndarray:
    return stack.sample(z)
