"""Independent reference computations used by the tests."""

import numpy as np

from nfad.flows import AffineCoupling, FlowStack, RQSCoupling, alternating_mask
from nfad.gradnet import DiffNet
from nfad.ndmath import finite_diff_jacobian


def random_coupling(kind, d, rng, index=0, hidden=(8,), scale=1.0, bins=8, bound=4.0):
    """Coupling layer whose conditioner is random everywhere, last layer scaled by ``scale``."""
    mask = alternating_mask(d, index)
    n_act = int((~mask).sum())
    n_out = n_act * (2 if kind == "affine" else 3 * bins - 1)
    cond = DiffNet.mlp([int(mask.sum()), *hidden, n_out], rng=rng, activation="tanh")
    cond.params[-2][...] *= scale
    cond.params[-1][...] = scale * (2.0 * rng.uniform(n_out) - 1.0)
    if kind == "affine":
        return AffineCoupling(mask, cond)
    return RQSCoupling(mask, cond, bins=bins, bound=bound)


def random_stack(d, rng, n_layers=6, kind="rqs", hidden=(16,), scale=1.0):
    layers = []
    for i in range(n_layers):
        k = kind if kind != "mixed" else ("rqs" if i % 2 == 0 else "affine")
        layers.append(random_coupling(k, d, rng, index=i, hidden=hidden, scale=scale))
    return FlowStack(layers, d)


def fd_logdet_forward(layer, z, h=1e-5):
    """log|det| of the central-difference Jacobian of ``layer.forward`` at a single point."""
    f = lambda v: layer.forward(v[None, :])[0][0]
    J = finite_diff_jacobian(f, z, h=h)
    return np.linalg.slogdet(J)[1]


def grid_mass(logp_fn, lo=-8.0, hi=8.0, step=0.02, chunk=40000):
    """Midpoint-rule integral of ``exp(logp)`` over a square."""
    c = np.arange(lo + step / 2, hi, step)
    gx, gy = np.meshgrid(c, c)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    total = 0.0
    for a in range(0, pts.shape[0], chunk):
        total += float(np.exp(logp_fn(pts[a:a + chunk])).sum())
    return total * step * step


def auc_pairs(scores, labels, positive=1):
    """O(n^2) pair count: P(score_pos > score_neg) + 0.5 P(tie), as an exact fraction."""
    from fractions import Fraction
    scores = list(scores)
    pos = [s for s, l in zip(scores, labels) if l == positive]
    neg = [s for s, l in zip(scores, labels) if l != positive]
    twice = 0
    for a in pos:
        for b in neg:
            twice += 2 if a > b else (1 if a == b else 0)
    return Fraction(twice, 2 * len(pos) * len(neg))


def moons_cfg(lambda_max=1.0, **dataset):
    """Moons run configuration as the CLI resolves it, with optional dataset overrides."""
    from nfad.config import MOONS_PRESET, load_config
    overrides = {"nf.lambda_max": lambda_max}
    overrides.update({f"dataset.{k}": v for k, v in dataset.items()})
    return load_config(None, overrides, preset=MOONS_PRESET)
