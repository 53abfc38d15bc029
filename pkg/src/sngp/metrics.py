"""Calibration metrics, OOD detection metrics and uncertainty scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import rankdata

from .errors import EmptySet, NotPositiveDefinite, SingularCovariance
from .linalg import cholesky

ECE_BINS = 15
COVARIANCE_RIDGE = 1e-6


@dataclass
class BinStat:
    confidence_mean: float
    accuracy: float
    count: int


@dataclass
class EvalReport:
    accuracy: float
    ece: float
    nll: float
    brier: float
    n: int
    bin_stats: list[BinStat] = field(default_factory=list)
    ood: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        if not self.ood:
            del out["ood"]
        return out


def _check(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if probs.shape[0] == 0:
        raise EmptySet("no predictions to score")
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("probs and labels disagree in length")
    return probs, labels


def ece_bins(probs, labels, bins: int = ECE_BINS) -> list[BinStat]:
    """Equal-width bins on top-class confidence over ``(1/K, 1]``.

    A confidence equal to ``1/K`` joins the first bin.
    """
    probs, labels = _check(probs, labels)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    k = probs.shape[1]
    conf = probs.max(axis=1)
    correct = probs.argmax(axis=1) == labels
    edges = np.linspace(1.0 / k, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    stats = []
    for m in range(bins):
        sel = idx == m
        c = int(sel.sum())
        stats.append(BinStat(float(conf[sel].mean()) if c else 0.0,
                             float(correct[sel].mean()) if c else 0.0, c))
    return stats


def ece(probs, labels, bins: int = ECE_BINS) -> float:
    stats = ece_bins(probs, labels, bins)
    n = sum(s.count for s in stats)
    return float(sum(s.count / n * abs(s.accuracy - s.confidence_mean) for s in stats))


def nll(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    p = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p, 1e-300))))


def brier(probs, labels) -> float:
    """Mean squared distance to the one-hot label, summed over classes (no 1/K).

    Equals the expected Bregman score with ``psi(p) = p^2 - 1/K`` against a
    one-hot truth.
    """
    probs, labels = _check(probs, labels)
    onehot = np.zeros_like(probs)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean(np.sum((probs - onehot) ** 2, axis=1)))


def accuracy(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    return float(np.mean(probs.argmax(axis=1) == labels))


def _scores(scores_ind, scores_ood):
    a = np.asarray(scores_ind, dtype=np.float64).ravel()
    b = np.asarray(scores_ood, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySet("both IND and OOD scores must be non-empty")
    return a, b


def auroc(scores_ind, scores_ood) -> float:
    """P(IND confidence > OOD confidence), ties counted half."""
    a, b = _scores(scores_ind, scores_ood)
    ranks = rankdata(np.concatenate([a, b]))
    u = ranks[: a.size].sum() - a.size * (a.size + 1) / 2.0
    return float(u / (a.size * b.size))


def aupr(scores_ind, scores_ood) -> float:
    """Average precision with OOD as the positive class (lower confidence = more OOD)."""
    a, b = _scores(scores_ind, scores_ood)
    unc = -np.concatenate([a, b])
    pos = np.concatenate([np.zeros(a.size), np.ones(b.size)])
    order = np.argsort(-unc, kind="mergesort")
    unc, pos = unc[order], pos[order]
    tp = np.cumsum(pos)
    seen = np.arange(1, unc.size + 1)
    # keep the last index of each group of tied scores
    last = np.r_[unc[1:] != unc[:-1], True]
    tp, seen = tp[last], seen[last]
    precision = tp / seen
    recall = tp / b.size
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def msp(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return (e / e.sum(axis=1, keepdims=True)).max(axis=1)


def dempster_shafer(logits) -> np.ndarray:
    """Confidence ``1 - K / (K + sum_k exp(g_k))``."""
    g = np.asarray(logits, dtype=np.float64)
    k = g.shape[1]
    if k < 2:
        raise ValueError("Dempster-Shafer score needs at least two logits")
    return 1.0 - k / (k + np.exp(g).sum(axis=1))


@dataclass
class GaussianFit:
    class_means: np.ndarray
    covariance: np.ndarray
    background_mean: np.ndarray
    background_covariance: np.ndarray

    def __post_init__(self):
        try:
            self._chol = cholesky(self.covariance)
            self._chol0 = cholesky(self.background_covariance)
        except NotPositiveDefinite:
            raise SingularCovariance("Gaussian fit needs SPD covariances") from None


def _ridged(cov: np.ndarray, ridge: float) -> np.ndarray:
    d = cov.shape[0]
    tr = np.trace(cov)
    if ridge == 0 or tr <= 0:
        try:
            cholesky(cov)
        except NotPositiveDefinite:
            raise SingularCovariance("embedding covariance is singular") from None
        return cov
    return cov + ridge * tr / d * np.eye(d)


def fit_gaussian(h: np.ndarray, labels: np.ndarray, ridge: float = COVARIANCE_RIDGE) -> GaussianFit:
    h = np.asarray(h, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    classes = np.unique(labels)
    means = np.stack([h[labels == k].mean(axis=0) for k in classes])
    centered = h - means[np.searchsorted(classes, labels)]
    cov = centered.T @ centered / h.shape[0]
    mu0 = h.mean(axis=0)
    c0 = (h - mu0).T @ (h - mu0) / h.shape[0]
    return GaussianFit(means, _ridged(cov, ridge), mu0, _ridged(c0, ridge))


def _sq_mahalanobis(chol: np.ndarray, diff: np.ndarray) -> np.ndarray:
    z = solve_triangular(chol, diff.T, lower=True)
    return np.sum(z * z, axis=0)


def class_distances(fit: GaussianFit, h: np.ndarray) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    return np.stack([_sq_mahalanobis(fit._chol, h - mu) for mu in fit.class_means], axis=1)


def mahalanobis(fit: GaussianFit, h: np.ndarray) -> np.ndarray:
    return -class_distances(fit, h).min(axis=1)


def relative_mahalanobis(fit: GaussianFit, h: np.ndarray) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=np.float64))
    md0 = _sq_mahalanobis(fit._chol0, h - fit.background_mean)
    return -(class_distances(fit, h) - md0[:, None]).min(axis=1)
