"""Minibatch SGD for the MAP objective, with final-epoch Laplace accumulation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import network
from .datasets import IND, LabeledSet
from .errors import DivergenceDetected
from .gp import RffGpHead, sigmoid, softmax
from .linalg import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 64
    prior_variance: float = 1.0
    seed: int = 0
    freeze_final_epoch: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0 or self.prior_variance <= 0:
            raise ValueError("learning_rate and prior_variance must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    train_accuracy: float | None = None


def task_loss(logits: np.ndarray, targets: np.ndarray, task: str):
    """Mean loss over the batch, its gradient w.r.t. logits, and output probs."""
    n = logits.shape[0]
    if task == "binary":
        g = logits[:, 0]
        y = targets.astype(np.float64)
        loss = np.mean(np.logaddexp(0.0, g) - y * g)
        p = sigmoid(g)
        return loss, ((p - y) / n)[:, None], p
    if task in ("multiclass", "multiclass_bound"):
        p = softmax(logits)
        y = targets.astype(np.int64)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -np.mean(logp[np.arange(n), y])
        grad = p.copy()
        grad[np.arange(n), y] -= 1.0
        return loss, grad / n, p
    if task == "regression":
        g = logits[:, 0]
        r = g - targets.astype(np.float64)
        return 0.5 * np.mean(r ** 2), (r / n)[:, None], g
    raise ValueError(f"unknown task {task!r}")


def precision_task(task: str) -> str:
    return "multiclass_bound" if task == "multiclass" else task


def predict_labels(logits: np.ndarray, task: str) -> np.ndarray:
    if task == "binary":
        return (logits[:, 0] > 0).astype(np.int64)
    return logits.argmax(axis=1)


def train_map(net: network.ResidualNetwork, head, data: LabeledSet, cfg: TrainerConfig,
              task: str = "binary") -> TrainResult:
    """Minimize task NLL + ||beta||^2/(2 tau) by SGD with momentum.

    Spectral constraints are re-applied after every step. During the final
    epoch a GP head accumulates its Laplace precision from the same forward
    passes, and its covariance is finalized at the end.
    """
    if data.domain != IND:
        raise ValueError("train_map expects in-distribution data")
    is_gp = isinstance(head, RffGpHead)
    if is_gp and head.prior_variance != cfg.prior_variance:
        head.prior_variance = float(cfg.prior_variance)
        head.reset_precision()
    rng = Rng(cfg.seed).child("trainer")
    n = len(data)
    velocity: dict[str, np.ndarray] = {}
    result = TrainResult()

    for epoch in range(cfg.epochs):
        final = epoch == cfg.epochs - 1
        if final and is_gp:
            head.reset_precision()
        order = rng.child("shuffle", epoch).generator.permutation(n)
        drop_rng = rng.child("dropout", epoch)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = data.inputs[idx], data.labels[idx]
            h, ncache = network.forward(net, x, train_mode=True, rng=drop_rng, return_cache=True)
            logits, hcache = head.forward(h)
            loss, glogits, probs = task_loss(logits, y, task)
            pen, pen_grads = head.penalty(n)
            loss += pen
            if not np.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)

            hgrads, gh = head.backward(hcache, glogits)
            for k, v in pen_grads.items():
                hgrads[k] = hgrads[k] + v
            _sgd_step(head.params(), hgrads, velocity, "head.", cfg)
            if not (final and cfg.freeze_final_epoch):
                ngrads, _ = network.backward(net, ncache, gh)
                _sgd_step(net.params(), ngrads, velocity, "net.", cfg)
                net.normalize()

            if final and is_gp:
                head.accumulate_precision(hcache["phi"], probs, precision_task(task))
        result.losses.append(total / n)
        log.debug("epoch %d loss %.6f", epoch, result.losses[-1])

    if is_gp:
        head.finalize()
    if task != "regression" and len(data):
        logits, _ = head.forward(network.forward(net, data.inputs))
        result.train_accuracy = float(np.mean(predict_labels(logits, task) == data.labels))
    return result


def _sgd_step(params, grads, velocity, prefix, cfg):
    for name, p in params.items():
        key = prefix + name
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(p)
        v *= cfg.momentum
        v -= cfg.learning_rate * grads[name]
        velocity[key] = v
        p += v
