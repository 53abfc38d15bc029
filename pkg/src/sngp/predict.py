"""Turning posterior logit moments into class probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import network
from .errors import EmptyEnsemble, ShapeMismatch
from .gp import sigmoid, softmax
from .linalg import Rng

MEAN_FIELD_FACTOR = math.pi / 8


@dataclass
class PredictivePosterior:
    mean_logits: np.ndarray
    variance: np.ndarray
    probs: np.ndarray
    members: int = 1

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    @property
    def adjusted_logits(self) -> np.ndarray:
        """Mean-field scaled logits, expanded to two columns for binary heads."""
        return expand_binary(self.mean_logits / np.sqrt(1.0 + MEAN_FIELD_FACTOR * self.variance)[:, None])


def expand_binary(logits: np.ndarray) -> np.ndarray:
    """Two-column logits ``(-g/2, g/2)`` for a sigmoid head; softmax gives the same probs.

    The symmetric split keeps logit-mass scores such as Dempster-Shafer
    lowest at ``g = 0`` rather than favouring one class.
    """
    if logits.shape[1] == 1:
        return np.hstack([-0.5 * logits, 0.5 * logits])
    return logits


def _link(logits: np.ndarray) -> np.ndarray:
    # one logit column means a sigmoid output for class 1
    if logits.shape[-1] == 1:
        p = sigmoid(logits[..., 0])
        return np.stack([1.0 - p, p], axis=-1)
    return softmax(logits)


def mean_field(mean_logits: np.ndarray, variance: np.ndarray,
               lam: float = MEAN_FIELD_FACTOR) -> np.ndarray:
    """``softmax(m / sqrt(1 + lam * v))`` row-wise (sigmoid for a single logit column)."""
    mean_logits = np.atleast_2d(mean_logits)
    variance = np.asarray(variance, dtype=np.float64)
    if np.any(variance < 0):
        raise ValueError("variance must be non-negative")
    scale = np.sqrt(1.0 + lam * variance)
    return _link(mean_logits / scale[:, None])


def mc_softmax(mean_logits: np.ndarray, variance: np.ndarray, samples: int, rng: Rng,
               chunk: int = 1000) -> np.ndarray:
    """Average of softmax over draws ``g ~ N(m, v I)`` per row."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    mean_logits = np.atleast_2d(mean_logits)
    std = np.sqrt(np.asarray(variance, dtype=np.float64))[:, None]
    acc = np.zeros((mean_logits.shape[0], max(2, mean_logits.shape[1])))
    g = rng.generator
    done = 0
    while done < samples:
        s = min(chunk, samples - done)
        draws = mean_logits[None] + std[None] * g.standard_normal((s, *mean_logits.shape))
        acc += _link(draws).sum(axis=0)
        done += s
    return acc / samples


def ensemble_average(members: list[PredictivePosterior]) -> PredictivePosterior:
    if not members:
        raise EmptyEnsemble("ensemble needs at least one member")
    shape = members[0].probs.shape
    if any(m.probs.shape != shape or m.mean_logits.shape != members[0].mean_logits.shape
           for m in members):
        raise ShapeMismatch("ensemble members disagree on output shapes")
    count = sum(m.members for m in members)
    return PredictivePosterior(
        mean_logits=np.mean([m.mean_logits for m in members], axis=0),
        variance=np.mean([m.variance for m in members], axis=0),
        probs=np.mean([m.probs for m in members], axis=0),
        members=count,
    )


def predict(net, head, x: np.ndarray, mode: str = "mean_field", lam: float = MEAN_FIELD_FACTOR,
            mc_samples: int = 1000, rng: Rng | None = None, train_mode: bool = False
            ) -> PredictivePosterior:
    h = network.forward(net, x, train_mode=train_mode, rng=rng)
    mean, var = head.predict(h)
    if mode == "mean_field":
        probs = mean_field(mean, var, lam)
    elif mode == "mc":
        probs = mc_softmax(mean, var, mc_samples, rng or Rng(0))
    else:
        raise ValueError(f"unknown predict mode {mode!r}")
    return PredictivePosterior(mean, var, probs)


def mc_dropout_predict(net, head, x: np.ndarray, passes: int, rng: Rng,
                       lam: float = MEAN_FIELD_FACTOR) -> PredictivePosterior:
    """Average mean-field predictions over ``passes`` stochastic forward passes."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if net.dropout_rate == 0:
        return predict(net, head, x, lam=lam)
    runs = [predict(net, head, x, lam=lam, rng=rng.child("pass", i), train_mode=True)
            for i in range(passes)]
    return ensemble_average(runs)
