"""Dense float64 linear algebra and seeded random sampling.

Matrices and vectors are plain ``numpy`` float64 arrays; this module only adds
the few operations the rest of the package relies on with explicit contracts.
"""

from __future__ import annotations

import zlib

import numpy as np
import scipy.linalg

from .errors import InvalidRange, NotPositiveDefinite, ShapeMismatch


class Rng:
    """Counter-based (Philox) generator that can be split into named substreams.

    ``Rng(seed).child("gp_head")`` always yields the same stream, so frozen
    weights can be regenerated from the seed alone.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = _path
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *_path]
        self._gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *keys: int | str) -> "Rng":
        ids = tuple(k if isinstance(k, int) else zlib.crc32(k.encode()) for k in keys)
        return Rng(self.seed, self.path + ids)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def sample_gaussian(rng: Rng, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise ShapeMismatch(f"rows and cols must be >= 1, got {rows}x{cols}")
    return rng.generator.standard_normal((rows, cols))


def sample_uniform(rng: Rng, n: int, lo: float, hi: float) -> np.ndarray:
    if not lo < hi:
        raise InvalidRange(f"need lo < hi, got [{lo}, {hi})")
    out = rng.generator.uniform(lo, hi, size=n)
    # uniform() may round up to hi for wide ranges
    return np.where(out >= hi, np.nextafter(hi, lo), out)


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises NotPositiveDefinite on a non-positive pivot."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"expected a square matrix, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


def spd_solve(m: np.ndarray, b: np.ndarray) -> np.ndarray:
    low = cholesky(m)
    return scipy.linalg.cho_solve((low, True), b)


def spd_inverse(m: np.ndarray) -> np.ndarray:
    low = cholesky(m)
    inv = scipy.linalg.cho_solve((low, True), np.eye(low.shape[0]))
    return 0.5 * (inv + inv.T)


def random_spd(rng: Rng, n: int, ridge: float = 1.0) -> np.ndarray:
    b = sample_gaussian(rng, n, n)
    return b.T @ b + ridge * np.eye(n)
