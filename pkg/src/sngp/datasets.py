"""Toy benchmarks: two moons, two ovals, OOD clusters and a bimodal 1-D regression."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateFeature, ShapeMismatch
from .linalg import Rng

IND = "IND"
OOD = "OOD"
NO_LABEL = -1

STD_FLOOR = 1e-8

# Geometry defaults; mirrored in default.ini so every run records them.
MOON_RADIUS = 1.0
MOON_OFFSET = (1.0, -0.5)
OVAL_STD = (1.5, 0.15)
OVAL_SEPARATION = 3.0
REGRESSION_MODES = (-4.0, 4.0)
REGRESSION_MODE_STD = 0.7
REGRESSION_TRUNCATION = 2.5
REGRESSION_NOISE = 0.05


@dataclass
class LabeledSet:
    inputs: np.ndarray
    labels: np.ndarray
    domain: str = IND

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.asarray(self.labels)
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch(
                f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels"
            )
        if self.domain not in (IND, OOD):
            raise ValueError(f"domain must be {IND} or {OOD}, got {self.domain!r}")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx) -> "LabeledSet":
        return LabeledSet(self.inputs[idx], self.labels[idx], self.domain)


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def two_moons(rng: Rng, n_per_class: int, noise_std: float,
              radius: float = MOON_RADIUS, offset=MOON_OFFSET) -> LabeledSet:
    """Two interleaved half circles; class 1 is the lower arc shifted by ``offset``."""
    if n_per_class < 1 or noise_std < 0:
        raise ValueError("need n_per_class >= 1 and noise_std >= 0")
    g = rng.generator
    t0 = g.uniform(0.0, np.pi, n_per_class)
    t1 = g.uniform(0.0, np.pi, n_per_class)
    upper = np.column_stack([radius * np.cos(t0), radius * np.sin(t0)])
    lower = np.column_stack([offset[0] - radius * np.cos(t1),
                             radius - radius * np.sin(t1) + offset[1]])
    x = np.vstack([upper, lower])
    if noise_std > 0:
        x = x + noise_std * g.standard_normal(x.shape)
    y = np.repeat([0, 1], n_per_class)
    return LabeledSet(x, y)


def two_ovals(rng: Rng, n_per_class: int, major_std: float = OVAL_STD[0],
              minor_std: float = OVAL_STD[1], separation: float = OVAL_SEPARATION) -> LabeledSet:
    if n_per_class < 1:
        raise ValueError("need n_per_class >= 1")
    g = rng.generator
    scale = np.array([major_std, minor_std])
    x0 = g.standard_normal((n_per_class, 2)) * scale + [0.0, -separation / 2]
    x1 = g.standard_normal((n_per_class, 2)) * scale + [0.0, separation / 2]
    return LabeledSet(np.vstack([x0, x1]), np.repeat([0, 1], n_per_class))


def ood_cluster(rng: Rng, n: int, center, std: float) -> LabeledSet:
    if n < 1:
        raise ValueError("need n >= 1")
    center = np.asarray(center, dtype=np.float64).ravel()
    x = np.tile(center, (n, 1))
    if std > 0:
        x = x + std * rng.generator.standard_normal(x.shape)
    return LabeledSet(x, np.full(n, NO_LABEL), OOD)


def regression_target(x: np.ndarray) -> np.ndarray:
    return np.sin(x) * x / 4.0


def bimodal_regression_1d(rng: Rng, n: int, modes=REGRESSION_MODES,
                          mode_std: float = REGRESSION_MODE_STD,
                          noise_std: float = REGRESSION_NOISE) -> LabeledSet:
    """Inputs from a truncated two-component mixture; the gap between modes is empty."""
    if n < 2:
        raise ValueError("need n >= 2")
    g = rng.generator
    comp = np.arange(n) % 2
    # truncated normal by resampling keeps the gap between the modes empty
    z = g.standard_normal(n)
    bad = np.abs(z) > REGRESSION_TRUNCATION
    while bad.any():
        z[bad] = g.standard_normal(bad.sum())
        bad = np.abs(z) > REGRESSION_TRUNCATION
    x = np.asarray(modes, dtype=np.float64)[comp] + mode_std * z
    x = np.clip(x, -12.0, 12.0)
    y = regression_target(x) + noise_std * g.standard_normal(n)
    return LabeledSet(x[:, None], y)


def split(data: LabeledSet, rng: Rng, fraction: float) -> tuple[LabeledSet, LabeledSet]:
    """Random split; returns (rest, held_out) with ``fraction`` of points held out."""
    perm = rng.generator.permutation(len(data))
    k = int(round(fraction * len(data)))
    return data.subset(np.sort(perm[k:])), data.subset(np.sort(perm[:k]))


def fit_norm(data: LabeledSet) -> NormStats:
    if data.domain != IND:
        raise ValueError("normalization statistics come from IND data only")
    mean = data.inputs.mean(axis=0)
    std = data.inputs.std(axis=0)
    if np.any(std < STD_FLOOR):
        bad = np.flatnonzero(std < STD_FLOOR).tolist()
        raise DegenerateFeature(f"features {bad} have std below {STD_FLOOR}")
    return NormStats(mean, std)


def apply_norm(data: LabeledSet, stats: NormStats) -> LabeledSet:
    return LabeledSet((data.inputs - stats.mean) / stats.std, data.labels, data.domain)


def invert_norm(data: LabeledSet, stats: NormStats) -> LabeledSet:
    return LabeledSet(data.inputs * stats.std + stats.mean, data.labels, data.domain)


def write_csv(data: LabeledSet, path) -> None:
    header = [f"x{i}" for i in range(data.dim)] + ["label", "domain"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row, label in zip(data.inputs, data.labels):
            w.writerow([repr(float(v)) for v in row] + [_fmt_label(label), data.domain])


def _fmt_label(label) -> str:
    if float(label).is_integer():
        return str(int(label))
    return repr(float(label))


def read_csv(path) -> LabeledSet:
    with open(Path(path), newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[-2:] != ["label", "domain"]:
        raise ValueError(f"{path}: header must end with label,domain")
    d = len(header) - 2
    if not body:
        raise ValueError(f"{path}: no data rows")
    x = np.array([[float(v) for v in r[:d]] for r in body])
    labels = [float(r[d]) for r in body]
    y = np.array(labels)
    if all(v.is_integer() for v in labels):
        y = y.astype(np.int64)
    domains = {r[d + 1] for r in body}
    if len(domains) != 1:
        raise ValueError(f"{path}: mixed domain tags {sorted(domains)}")
    return LabeledSet(x, y, domains.pop())
