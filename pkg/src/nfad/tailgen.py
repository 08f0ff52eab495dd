"""Surrogate anomalies from the low-density tail of the latent Gaussian.

The tail of mass ``p`` is ``{z : ||z||^2 >= Q}`` with ``Q`` the chi-square
upper quantile; since the level sets of N(0, I) are spheres, this is the
least-dense region holding exactly that much probability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ndmath import RngState, chi2_tail_quantile

RADIAL_BELOW = 1e-3


@dataclass(frozen=True)
class TailSpec:
    p_tail: float
    d: int
    Q: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.p_tail <= 1.0:
            raise ValueError(f"p_tail must lie in (0, 1], got {self.p_tail}")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        object.__setattr__(self, "Q", chi2_tail_quantile(self.p_tail, self.d))


def _rejection(spec: TailSpec, n: int, rng: RngState) -> np.ndarray:
    out = []
    have = 0
    while have < n:
        want = n - have
        draw = rng.normal((int(want / spec.p_tail * 1.2) + 16, spec.d))
        keep = draw[np.sum(draw * draw, axis=1) >= spec.Q]
        out.append(keep[:want])
        have += min(keep.shape[0], want)
    return np.vstack(out)


def _radial(spec: TailSpec, n: int, rng: RngState) -> np.ndarray:
    direction = rng.normal((n, spec.d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    # P(R^2 >= r2 | R^2 >= Q) = u  <=>  sf(r2) = u * p_tail
    u = 1.0 - rng.uniform(n)
    r2 = chi2_tail_quantile(u * spec.p_tail, spec.d)
    r2 = np.maximum(r2, spec.Q)
    return direction * np.sqrt(r2)[:, None]


def sample_tail_latents(spec: TailSpec, n: int, rng: RngState, method: str | None = None) -> np.ndarray:
    """``n`` draws from N(0, I_d) conditioned on ``||z||^2 >= Q``.

    Rejection sampling when the tail is not too thin, otherwise the radial
    construction (uniform direction, truncated chi radius by inverse CDF).
    ``method`` forces ``"rejection"`` or ``"radial"``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if method is None:
        method = "rejection" if spec.p_tail >= RADIAL_BELOW else "radial"
    if method == "rejection":
        z = _rejection(spec, n, rng)
    elif method == "radial":
        z = _radial(spec, n, rng)
    else:
        raise ValueError(f"unknown tail sampler {method!r}")
    if not np.all(np.sum(z * z, axis=1) >= spec.Q):
        raise AssertionError("tail sampler emitted a point inside the threshold")
    return z


def gen_surrogates(stack, spec: TailSpec, n: int, rng: RngState) -> np.ndarray:
    """Push tail latents through the flow: ``x = f(z)``."""
    if spec.d != stack.d:
        raise ValueError(f"tail dimension {spec.d} does not match flow dimension {stack.d}")
    return stack.sample(sample_tail_latents(spec, n, rng))
