"""Spectral normalization by persistent power iteration."""

from __future__ import annotations

import numpy as np

from .errors import ZeroMatrix
from .linalg import Rng


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


class SpectralConstraint:
    """Keeps ``||W||_2 <= bound`` for one weight matrix.

    ``u`` (left) and ``v`` (right) singular-vector estimates persist between
    calls, so a single power iteration per training step tracks the slowly
    changing top singular pair.
    """

    def __init__(self, shape: tuple[int, int], bound: float, power_iters: int = 1,
                 rng: Rng | None = None):
        if bound <= 0:
            raise ValueError(f"spectral bound must be positive, got {bound}")
        if power_iters < 1:
            raise ValueError("power_iters must be >= 1")
        self.bound = float(bound)
        self.power_iters = int(power_iters)
        rng = rng or Rng(0)
        g = rng.generator
        self.u = _unit(g.standard_normal(shape[0]))
        self.v = _unit(g.standard_normal(shape[1]))
        self.last_estimate: float | None = None

    def estimate_norm(self, w: np.ndarray, iters: int | None = None) -> float:
        if not np.any(w):
            raise ZeroMatrix("cannot estimate the spectral norm of a zero matrix")
        u, v = self.u, self.v
        for _ in range(iters or self.power_iters):
            v = w.T @ u
            if not np.any(v):
                # u orthogonal to the row space; restart from a column of W
                v = w[np.argmax(np.abs(w).sum(axis=1))]
            v = _unit(v)
            u = _unit(w @ v)
        self.u, self.v = u, v
        self.last_estimate = float(u @ w @ v)
        return self.last_estimate

    def apply(self, w: np.ndarray, estimate: float | None = None) -> np.ndarray:
        lam = self.last_estimate if estimate is None else estimate
        if lam is None:
            raise RuntimeError("estimate_norm must run before apply")
        if self.bound < lam:
            return self.bound * w / lam
        return w

    def __call__(self, w: np.ndarray, iters: int | None = None) -> np.ndarray:
        if not np.any(w):
            return w
        return self.apply(w, self.estimate_norm(w, iters))

    def state(self) -> dict:
        return {"bound": self.bound, "power_iters": self.power_iters,
                "u": self.u, "v": self.v}

    @classmethod
    def from_state(cls, state: dict) -> "SpectralConstraint":
        obj = cls.__new__(cls)
        obj.bound = float(state["bound"])
        obj.power_iters = int(state["power_iters"])
        obj.u = np.asarray(state["u"], dtype=np.float64)
        obj.v = np.asarray(state["v"], dtype=np.float64)
        obj.last_estimate = None
        return obj


def spectral_norm(w: np.ndarray) -> float:
    """Exact top singular value (dense SVD), used as a reference."""
    return float(np.linalg.svd(w, compute_uv=False)[0])
