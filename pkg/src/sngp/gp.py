"""Random-feature Gaussian-process output layer with a Laplace posterior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlreadyFinalized, NotFinalized, ShapeMismatch
from .linalg import Rng, sample_gaussian, sample_uniform, spd_inverse

TASKS = ("binary", "multiclass_bound", "regression")


@dataclass
class PrecisionUpdateMode:
    mode: str = "exact"
    ridge: float = 0.001
    discount: float = 0.999

    def __post_init__(self):
        if self.mode not in ("exact", "moving_average"):
            raise ValueError(f"unknown precision mode {self.mode!r}")
        if self.ridge <= 0 or not 0 < self.discount < 1:
            raise ValueError("need ridge > 0 and discount in (0, 1)")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def likelihood_weights(probs: np.ndarray, task: str) -> np.ndarray:
    """Per-example curvature of the likelihood w.r.t. the logit.

    binary: p(1-p) of the sigmoid output; multiclass_bound: p*(1-p*) with p*
    the top class probability (shared-covariance upper bound); regression: 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if task == "binary":
        p = probs[:, -1] if probs.ndim == 2 else probs
        return p * (1.0 - p)
    if task == "multiclass_bound":
        top = probs.max(axis=1)
        return top * (1.0 - top)
    if task == "regression":
        return np.ones(probs.shape[0])
    raise ValueError(f"unknown task {task!r}")


def per_class_precision(phi: np.ndarray, probs: np.ndarray,
                        prior_variance: float = 1.0) -> list[np.ndarray]:
    """Exact per-class precision blocks ``sum_i p_ik(1-p_ik) phi_i phi_i^T + I/tau``."""
    base = np.eye(phi.shape[1]) / prior_variance
    return [base + (phi * (p * (1 - p))[:, None]).T @ phi for p in probs.T]


class RffGpHead:
    """Output layer ``logits = Phi(h) @ beta`` with frozen random features.

    ``Phi(h) = sqrt(2 amplitude / D) * cos(-W (h / length_scale) + b)`` where
    ``W ~ N(0, 1)`` and ``b ~ U[0, 2 pi)`` are regenerated from ``seed``.
    The Laplace precision starts at ``I / prior_variance`` (exact mode) or
    ``ridge * I`` (moving-average mode).
    """

    def __init__(self, in_dim: int, num_outputs: int, num_features: int = 1024,
                 length_scale: float = 2.0, amplitude: float = 1.0,
                 prior_variance: float = 1.0, seed: int = 0,
                 precision_mode: PrecisionUpdateMode | None = None,
                 input_projection_dim: int | None = None, layer_norm: bool = False):
        if min(length_scale, amplitude, prior_variance) <= 0:
            raise ValueError("length_scale, amplitude and prior_variance must be positive")
        self.in_dim = in_dim
        self.num_outputs = num_outputs
        self.num_features = num_features
        self.length_scale = float(length_scale)
        self.amplitude = float(amplitude)
        self.prior_variance = float(prior_variance)
        self.seed = int(seed)
        self.precision_mode = precision_mode or PrecisionUpdateMode()
        self.input_projection_dim = input_projection_dim
        self.layer_norm = bool(layer_norm)
        self._build_frozen()
        self.beta = np.zeros((num_features, num_outputs))
        self.variance_scale = 1.0
        self.reset_precision()

    def _build_frozen(self):
        rng = Rng(self.seed).child("rff")
        d = self.in_dim
        self.projection = None
        if self.input_projection_dim:
            # fixed Gaussian map keeps distances in expectation
            proj = sample_gaussian(rng.child("projection"), self.input_projection_dim, d)
            self.projection = proj / np.sqrt(self.input_projection_dim)
            d = self.input_projection_dim
        self.W = sample_gaussian(rng.child("W"), self.num_features, d)
        self.b = sample_uniform(rng.child("b"), self.num_features, 0.0, 2 * np.pi)

    # -- features -----------------------------------------------------------

    def _pre(self, h: np.ndarray):
        cache = {}
        z = h
        if self.layer_norm:
            mu = z.mean(axis=1, keepdims=True)
            sd = np.sqrt(((z - mu) ** 2).mean(axis=1, keepdims=True) + 1e-6)
            cache["ln"] = (z - mu, sd)
            z = (z - mu) / sd
        if self.projection is not None:
            z = z @ self.projection.T
        return z, cache

    def features(self, h: np.ndarray, return_cache: bool = False):
        h = np.asarray(h, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected (n, {self.in_dim}) hidden features, got {h.shape}")
        z, cache = self._pre(h)
        arg = -(z / self.length_scale) @ self.W.T + self.b
        scale = np.sqrt(2.0 * self.amplitude / self.num_features)
        phi = scale * np.cos(arg)
        if return_cache:
            cache["arg"] = arg
            return phi, cache
        return phi

    def features_backward(self, cache: dict, grad_phi: np.ndarray) -> np.ndarray:
        scale = np.sqrt(2.0 * self.amplitude / self.num_features)
        # d cos(-Wz/l + b)/dz = sin(arg) W / l
        g_arg = grad_phi * scale * -np.sin(cache["arg"])
        gz = -(g_arg @ self.W) / self.length_scale
        if self.projection is not None:
            gz = gz @ self.projection
        if "ln" in cache:
            centered, sd = cache["ln"]
            xhat = centered / sd
            gz = (gz - gz.mean(axis=1, keepdims=True)
                  - xhat * (gz * xhat).mean(axis=1, keepdims=True)) / sd
        return gz

    def logits(self, phi: np.ndarray) -> np.ndarray:
        if phi.ndim != 2 or phi.shape[1] != self.num_features:
            raise ShapeMismatch(f"expected (n, {self.num_features}) features, got {phi.shape}")
        return phi @ self.beta

    # -- training interface (shared with DenseHead) ---------------------------

    def forward(self, h: np.ndarray):
        phi, cache = self.features(h, return_cache=True)
        cache["phi"] = phi
        return self.logits(phi), cache

    def backward(self, cache: dict, grad_logits: np.ndarray):
        grads = {"beta": cache["phi"].T @ grad_logits}
        grad_phi = grad_logits @ self.beta.T
        return grads, self.features_backward(cache, grad_phi)

    def params(self) -> dict:
        return {"beta": self.beta}

    def penalty(self, n_total: int):
        """L2 term ``||beta||^2 / (2 tau)`` spread over ``n_total`` examples."""
        c = 1.0 / (self.prior_variance * n_total)
        return 0.5 * c * np.sum(self.beta ** 2), {"beta": c * self.beta}

    # -- Laplace posterior ----------------------------------------------------

    @property
    def finalized(self) -> bool:
        return self.covariance is not None

    def reset_precision(self):
        # allocated on first use so feature-only heads can have a huge D
        self._precision = None
        self.covariance = None

    @property
    def precision(self) -> np.ndarray:
        if self._precision is None:
            if self.precision_mode.mode == "exact":
                self._precision = np.eye(self.num_features) / self.prior_variance
            else:
                self._precision = self.precision_mode.ridge * np.eye(self.num_features)
        return self._precision

    @precision.setter
    def precision(self, value):
        self._precision = value

    def accumulate_precision(self, phi: np.ndarray, probs: np.ndarray, task: str):
        if self.finalized:
            raise AlreadyFinalized("precision is frozen after finalize()")
        w = likelihood_weights(probs, task)
        batch = (phi * w[:, None]).T @ phi
        if self.precision_mode.mode == "exact":
            self.precision += batch
        else:
            m = self.precision_mode.discount
            self.precision = m * self.precision + (1.0 - m) * batch
        self.precision = 0.5 * (self.precision + self.precision.T)

    def finalize(self) -> np.ndarray:
        self.covariance = spd_inverse(self.precision)
        return self.covariance

    def fit_regression(self, h: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Closed-form MAP and Laplace covariance under squared loss (unit noise)."""
        if self.finalized:
            raise AlreadyFinalized("head already finalized")
        phi = self.features(h)
        y = np.asarray(y, dtype=np.float64).reshape(len(phi), -1)
        self.accumulate_precision(phi, np.zeros((len(phi), 1)), "regression")
        cov = self.finalize()
        self.beta = cov @ (phi.T @ y)
        return self.beta

    def predictive_variance(self, phi: np.ndarray) -> np.ndarray:
        if not self.finalized:
            raise NotFinalized("call finalize() before predicting variances")
        v = np.einsum("ij,jk,ik->i", phi, self.covariance, phi)
        return self.variance_scale * np.maximum(v, 0.0)

    def predict(self, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phi = self.features(h)
        return self.logits(phi), self.predictive_variance(phi)


class DenseHead:
    """Plain linear output layer: the deterministic baseline."""

    def __init__(self, in_dim: int, num_outputs: int, rng: Rng | None = None):
        rng = rng or Rng(0)
        self.in_dim = in_dim
        self.num_outputs = num_outputs
        self.W = sample_gaussian(rng, in_dim, num_outputs) / np.sqrt(in_dim)
        self.b = np.zeros(num_outputs)
        self.covariance = None

    def forward(self, h):
        if h.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected (n, {self.in_dim}) hidden features, got {h.shape}")
        return h @ self.W + self.b, {"h": h}

    def backward(self, cache, grad_logits):
        grads = {"W": cache["h"].T @ grad_logits, "b": grad_logits.sum(axis=0)}
        return grads, grad_logits @ self.W.T

    def params(self) -> dict:
        return {"W": self.W, "b": self.b}

    def penalty(self, n_total: int):
        return 0.0, {}

    def predict(self, h):
        logits, _ = self.forward(h)
        return logits, np.zeros(h.shape[0])
