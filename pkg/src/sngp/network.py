"""Residual feed-forward networks with hand-written reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch
from .linalg import Rng, sample_gaussian
from .spectral import SpectralConstraint

ACTIVATIONS = ("relu", "identity")


@dataclass
class Block:
    W: np.ndarray
    b: np.ndarray
    constraint: SpectralConstraint | None = None


@dataclass
class ResidualNetwork:
    """``h(x) = h_L o ... o h_1(P x + c)`` with ``h_l(z) = z + dropout(a(W_l z + b_l))``.

    ``input_proj`` is ``(width, d)``; ``None`` means the input is already
    ``width``-dimensional and enters the residual stack directly.
    """

    input_proj: np.ndarray | None
    input_bias: np.ndarray | None
    blocks: list[Block] = field(default_factory=list)
    activation: str = "relu"
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        for blk in self.blocks:
            if blk.W.shape[0] != blk.W.shape[1]:
                raise ShapeMismatch("residual blocks must be square")
            if blk.W.shape[0] != self.width:
                raise ShapeMismatch("all blocks must share the hidden width")

    @property
    def width(self) -> int:
        if self.input_proj is not None:
            return self.input_proj.shape[0]
        return self.blocks[0].W.shape[0]

    @property
    def in_dim(self) -> int:
        if self.input_proj is not None:
            return self.input_proj.shape[1]
        return self.width

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        if self.input_proj is not None:
            out["input_proj"] = self.input_proj
            out["input_bias"] = self.input_bias
        for i, blk in enumerate(self.blocks):
            out[f"W{i}"] = blk.W
            out[f"b{i}"] = blk.b
        return out

    def set_param(self, name: str, value: np.ndarray):
        if name in ("input_proj", "input_bias"):
            setattr(self, name, value)
        else:
            blk = self.blocks[int(name[1:])]
            setattr(blk, name[0], value)

    def normalize(self, iters: int | None = None):
        """Project every constrained weight back under its spectral bound."""
        for blk in self.blocks:
            if blk.constraint is not None:
                blk.W = blk.constraint(blk.W, iters)


def build_network(in_dim: int, width: int, depth: int, rng: Rng, *,
                  activation: str = "relu", dropout_rate: float = 0.0,
                  spec_norm_bound: float | None = None, power_iters: int = 1,
                  project_input: bool = True, weight_scale: float = 1.0) -> ResidualNetwork:
    proj = bias = None
    if project_input:
        proj = sample_gaussian(rng.child("input_proj"), width, in_dim) / np.sqrt(in_dim)
        bias = np.zeros(width)
    elif in_dim != width:
        raise ShapeMismatch("without an input projection in_dim must equal width")
    blocks = []
    for i in range(depth):
        W = weight_scale * sample_gaussian(rng.child("block", i), width, width) / np.sqrt(width)
        constraint = None
        if spec_norm_bound is not None:
            constraint = SpectralConstraint((width, width), spec_norm_bound, power_iters,
                                            rng.child("power_iteration", i))
        blocks.append(Block(W, np.zeros(width), constraint))
    net = ResidualNetwork(proj, bias, blocks, activation, dropout_rate)
    net.normalize(iters=50)
    return net


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else z


def forward(net: ResidualNetwork, x: np.ndarray, train_mode: bool = False,
            rng: Rng | None = None, return_cache: bool = False):
    """Penultimate features ``h(x)``; dropout only when ``train_mode`` is set."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeMismatch(f"expected (n, {net.in_dim}) inputs, got {x.shape}")
    use_dropout = train_mode and net.dropout_rate > 0
    if use_dropout and rng is None:
        raise ValueError("dropout in train_mode needs an rng")
    h = x if net.input_proj is None else x @ net.input_proj.T + net.input_bias
    cache = {"x": x, "blocks": []}
    keep = 1.0 - net.dropout_rate
    for blk in net.blocks:
        z = h @ blk.W.T + blk.b
        a = _act(z, net.activation)
        mask = None
        if use_dropout:
            mask = (rng.generator.random(a.shape) < keep) / keep
            a = a * mask
        cache["blocks"].append((h, z, mask))
        h = h + a
    if return_cache:
        return h, cache
    return h


def forward_blocks(net: ResidualNetwork, z: np.ndarray) -> np.ndarray:
    """Residual stack only (no input projection, no dropout)."""
    h = np.asarray(z, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.width:
        raise ShapeMismatch(f"expected (n, {net.width}) hidden inputs, got {h.shape}")
    for blk in net.blocks:
        h = h + _act(h @ blk.W.T + blk.b, net.activation)
    return h


def backward(net: ResidualNetwork, cache: dict, upstream_grad: np.ndarray):
    """Gradients of ``sum(upstream_grad * h(x))`` w.r.t. every parameter and ``x``."""
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.shape != (cache["x"].shape[0], net.width):
        raise ShapeMismatch(f"upstream grad shape {g.shape} does not match forward output")
    grads = {}
    for i in reversed(range(net.depth)):
        blk = net.blocks[i]
        h_in, z, mask = cache["blocks"][i]
        ga = g if mask is None else g * mask
        gz = ga * (z > 0) if net.activation == "relu" else ga
        grads[f"W{i}"] = gz.T @ h_in
        grads[f"b{i}"] = gz.sum(axis=0)
        g = g + gz @ blk.W
    if net.input_proj is not None:
        grads["input_proj"] = g.T @ cache["x"]
        grads["input_bias"] = g.sum(axis=0)
        g = g @ net.input_proj
    return grads, g
