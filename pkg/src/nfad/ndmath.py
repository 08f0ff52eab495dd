"""Deterministic numeric substrate: seeded RNG, normal sampling, chi-square tails.

Random bits come from numpy's Philox4x64 counter-based generator, whose raw
output stream is fixed by its algorithm and therefore identical across
platforms and numpy releases. Everything above the raw 64-bit words
(uniform conversion, Box-Muller, permutations) is done here so that the
sample sequence never depends on numpy's higher-level sampling routines.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
from scipy import special

LOG_2PI = math.log(2.0 * math.pi)
_INV_2_53 = 1.0 / 9007199254740992.0


class RngState:
    """Seeded random stream.

    Two states built from the same ``(seed, stream)`` pair emit bit-identical
    sequences. Independent streams for parallel work come from :meth:`spawn`.
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32, self.stream])
        self._bitgen = np.random.Philox(ss)
        self.words_used = 0

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, stream={self.stream}, words_used={self.words_used})"

    def spawn(self, stream: int) -> "RngState":
        """Child stream keyed by ``stream``; does not advance this state."""
        return RngState(self.seed, stream=(self.stream + 1) * 1_000_003 + int(stream))

    def raw(self, n: int) -> np.ndarray:
        n = int(n)
        self.words_used += n
        return self._bitgen.random_raw(n).astype(np.uint64, copy=False)

    def uniform(self, size) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 random bits each."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        words = self.raw(n) >> np.uint64(11)
        return (words.astype(np.float64) * _INV_2_53).reshape(shape)

    def normal(self, size) -> np.ndarray:
        """Standard normal draws by Box-Muller, both outputs of each pair used."""
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        n_pairs = (n + 1) // 2
        u = self.uniform(2 * n_pairs)
        # 1 - u lies in (0, 1], keeping the log finite
        r = np.sqrt(-2.0 * np.log1p(-u[:n_pairs]))
        theta = 2.0 * math.pi * u[n_pairs:]
        out = np.empty(2 * n_pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n].reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, high: int, size) -> np.ndarray:
        """Uniform integers in [0, high)."""
        u = self.uniform(size)
        return np.minimum((u * high).astype(np.int64), high - 1)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")


def std_normal_logpdf(z) -> np.ndarray | float:
    """Log-density of N(0, I_d). Accepts a single point ``(d,)`` or rows ``(n, d)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ValueError("z must have at least one dimension of size >= 1")
    _check_finite(z, "z")
    d = z.shape[-1]
    out = -0.5 * d * LOG_2PI - 0.5 * np.sum(z * z, axis=-1)
    return float(out) if z.ndim == 1 else out


def sample_std_normal(n: int, d: int, rng: RngState) -> np.ndarray:
    if n < 1 or d < 1:
        raise ValueError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
    return rng.normal((n, d))


def chi2_sf(q, d: int):
    """P(||Z||^2 >= q) for Z ~ N(0, I_d)."""
    return special.gammaincc(0.5 * d, 0.5 * np.asarray(q, dtype=np.float64))


def chi2_tail_quantile(p_tail, d: int, tol: float = 1e-10):
    """Squared-norm threshold Q with P(||Z||^2 >= Q) = p_tail.

    Bisection on the chi-square survival function; vectorized over ``p_tail``.
    Returns a float for scalar input.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    p = np.asarray(p_tail, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError(f"p_tail must lie in (0, 1], got {p_tail}")
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    lo = np.zeros_like(p)
    hi = np.full_like(p, float(d) + 10.0)
    while True:
        grow = chi2_sf(hi, d) > p
        if not grow.any():
            break
        hi = np.where(grow, 2.0 * hi, hi)
    whole = p >= 1.0
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        above = chi2_sf(mid, d) > p
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    q = np.where(whole, 0.0, 0.5 * (lo + hi))
    return float(q[0]) if scalar else q


def finite_diff_jacobian(f: Callable[[np.ndarray], np.ndarray], z, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d f_i / d z_j``."""
    if h <= 0:
        raise ValueError("h must be positive")
    z = np.asarray(z, dtype=np.float64).ravel()
    d = z.size
    f0 = np.asarray(f(z), dtype=np.float64).ravel()
    jac = np.empty((f0.size, d))
    for j in range(d):
        step = np.zeros(d)
        step[j] = h
        fp = np.asarray(f(z + step), dtype=np.float64).ravel()
        fm = np.asarray(f(z - step), dtype=np.float64).ravel()
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"f produced non-finite output near z along axis {j}")
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac
