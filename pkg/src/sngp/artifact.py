"""Versioned JSON model artifacts with exact base64 float64 payloads.

Matrices are stored as ``{"dtype": "<f8", "shape": [...], "data": base64}``
so a load reproduces every bit. Frozen random-feature weights are not
stored; they are regenerated from the recorded seed. Keys are sorted so
the same model always serializes to the same bytes.
"""

from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import metrics, network
from .datasets import NormStats
from .errors import ArtifactVersionMismatch, ConfigError
from .gp import DenseHead, PrecisionUpdateMode, RffGpHead
from .pipeline import Member, TrainedModel
from .spectral import SpectralConstraint

FORMAT_VERSION = 1


def encode(a) -> dict | None:
    if a is None:
        return None
    a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
    return {"dtype": "<f8", "shape": list(a.shape),
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode(obj) -> np.ndarray | None:
    if obj is None:
        return None
    if obj.get("dtype") != "<f8":
        raise ValueError(f"unsupported matrix dtype {obj.get('dtype')!r}")
    buf = base64.b64decode(obj["data"])
    return np.frombuffer(buf, dtype="<f8").reshape(obj["shape"]).astype(np.float64)


def _net_to_dict(net: network.ResidualNetwork) -> dict:
    blocks = []
    for blk in net.blocks:
        c = None
        if blk.constraint is not None:
            s = blk.constraint.state()
            c = {"bound": s["bound"], "power_iters": s["power_iters"],
                 "u": encode(s["u"]), "v": encode(s["v"])}
        blocks.append({"W": encode(blk.W), "b": encode(blk.b), "constraint": c})
    return {"activation": net.activation, "dropout_rate": net.dropout_rate,
            "input_proj": encode(net.input_proj), "input_bias": encode(net.input_bias),
            "blocks": blocks}


def _net_from_dict(d: dict) -> network.ResidualNetwork:
    blocks = []
    for b in d["blocks"]:
        c = b["constraint"]
        if c is not None:
            c = SpectralConstraint.from_state({"bound": c["bound"], "power_iters": c["power_iters"],
                                               "u": decode(c["u"]), "v": decode(c["v"])})
        blocks.append(network.Block(decode(b["W"]), decode(b["b"]), c))
    return network.ResidualNetwork(decode(d["input_proj"]), decode(d["input_bias"]), blocks,
                                   d["activation"], d["dropout_rate"])


def _head_to_dict(head) -> dict:
    if isinstance(head, DenseHead):
        return {"kind": "dense", "W": encode(head.W), "b": encode(head.b)}
    pm = head.precision_mode
    return {"kind": "gp", "in_dim": head.in_dim, "num_outputs": head.num_outputs,
            "num_features": head.num_features, "length_scale": head.length_scale,
            "amplitude": head.amplitude, "prior_variance": head.prior_variance,
            "seed": head.seed, "frozen_shape": list(head.W.shape),
            "precision_mode": {"mode": pm.mode, "ridge": pm.ridge, "discount": pm.discount},
            "input_projection_dim": head.input_projection_dim, "layer_norm": head.layer_norm,
            "beta": encode(head.beta), "covariance": encode(head.covariance),
            "variance_scale": head.variance_scale}


def _head_from_dict(d: dict):
    if d["kind"] == "dense":
        W = decode(d["W"])
        head = DenseHead(W.shape[0], W.shape[1])
        head.W, head.b = W, decode(d["b"])
        return head
    pm = d["precision_mode"]
    head = RffGpHead(d["in_dim"], d["num_outputs"], d["num_features"], d["length_scale"],
                     d["amplitude"], d["prior_variance"], seed=d["seed"],
                     precision_mode=PrecisionUpdateMode(pm["mode"], pm["ridge"], pm["discount"]),
                     input_projection_dim=d["input_projection_dim"], layer_norm=d["layer_norm"])
    if list(head.W.shape) != d["frozen_shape"]:
        raise ValueError("regenerated random features do not match the stored shape")
    head.beta = decode(d["beta"])
    head.precision = None
    head.covariance = decode(d["covariance"])
    head.variance_scale = float(d["variance_scale"])
    return head


def to_dict(model: TrainedModel) -> dict:
    g = model.gaussian
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.raw,
        "task": model.task,
        "num_classes": model.num_classes,
        "norm": None if model.norm is None else {"mean": encode(model.norm.mean),
                                                 "std": encode(model.norm.std)},
        "input_bounds": encode(model.input_bounds),
        "gaussian": None if g is None else {
            "class_means": encode(g.class_means), "covariance": encode(g.covariance),
            "background_mean": encode(g.background_mean),
            "background_covariance": encode(g.background_covariance)},
        "members": [{"network": _net_to_dict(m.net), "head": _head_to_dict(m.head)}
                    for m in model.members],
    }


def from_dict(d: dict) -> TrainedModel:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactVersionMismatch(f"artifact format {version}, expected {FORMAT_VERSION}")
    try:
        cfg = config_mod.from_raw(d["config"])
    except ConfigError as exc:
        raise ArtifactVersionMismatch(f"stored config is not understood: {exc}") from None
    norm = None
    if d["norm"] is not None:
        norm = NormStats(decode(d["norm"]["mean"]), decode(d["norm"]["std"]))
    g = d["gaussian"]
    gaussian = None
    if g is not None:
        gaussian = metrics.GaussianFit(decode(g["class_means"]), decode(g["covariance"]),
                                       decode(g["background_mean"]),
                                       decode(g["background_covariance"]))
    members = [Member(_net_from_dict(m["network"]), _head_from_dict(m["head"]))
               for m in d["members"]]
    return TrainedModel(cfg, d["task"], d["num_classes"], members, norm, gaussian,
                        decode(d["input_bounds"]))


def dumps(model: TrainedModel) -> str:
    return json.dumps(to_dict(model), sort_keys=True, indent=1) + "\n"


def save(model: TrainedModel, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps(model))
    return path


def load(path: str | Path) -> TrainedModel:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read artifact {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ArtifactVersionMismatch(f"{path} is not a model artifact")
    return from_dict(d)
