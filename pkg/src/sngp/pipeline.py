"""End-to-end runs: data preparation, training, calibration, prediction and evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import datasets, metrics, network
from .config import ExperimentConfig
from .datasets import LabeledSet, NormStats
from .errors import ConfigError, DimensionUnsupported
from .gp import DenseHead, PrecisionUpdateMode, RffGpHead
from .linalg import Rng
from .predict import PredictivePosterior, ensemble_average, mean_field, mc_softmax
from .trainer import TrainerConfig, train_map

log = logging.getLogger(__name__)

AMPLITUDE_GRID = np.logspace(np.log10(0.01), np.log10(50.0), 30)


@dataclass
class Member:
    net: network.ResidualNetwork
    head: RffGpHead | DenseHead
    losses: list[float] = field(default_factory=list)


@dataclass
class Splits:
    train: LabeledSet
    validation: LabeledSet | None
    test: LabeledSet | None
    ood: dict[str, LabeledSet] = field(default_factory=dict)


@dataclass
class TrainedModel:
    config: ExperimentConfig
    task: str
    num_classes: int
    members: list[Member]
    norm: NormStats | None = None
    gaussian: metrics.GaussianFit | None = None
    input_bounds: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.members[0].net.in_dim


def _seed_from(rng: Rng) -> int:
    return int(rng.generator.integers(0, 2 ** 31 - 1))


# -- data ---------------------------------------------------------------------

def generate_dataset(cfg: ExperimentConfig) -> LabeledSet:
    d = cfg.data
    rng = Rng(cfg.seed).child("data")
    if d.dataset == "two_moons":
        return datasets.two_moons(rng, d.n_per_class, d.noise_std, d.moon_radius,
                                  (d.moon_offset_x, d.moon_offset_y))
    if d.dataset == "two_ovals":
        return datasets.two_ovals(rng, d.n_per_class, d.oval_major_std, d.oval_minor_std,
                                  d.oval_separation)
    if d.dataset == "bimodal_regression":
        return datasets.bimodal_regression_1d(rng, d.n)
    try:
        return datasets.read_csv(d.path)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {d.path}: {exc}") from None


def ood_sets(cfg: ExperimentConfig, dim: int) -> dict[str, LabeledSet]:
    out = {}
    rng = Rng(cfg.seed).child("ood")
    for i, center in enumerate(cfg.ood.centers):
        if len(center) != dim:
            raise ConfigError(f"ood center {center} does not match input dimension {dim}")
        out[f"ood_{i}"] = datasets.ood_cluster(rng.child(i), cfg.ood.n, center, cfg.ood.std)
    return out


def prepare_splits(cfg: ExperimentConfig) -> Splits:
    data = generate_dataset(cfg)
    rng = Rng(cfg.seed).child("split")
    rest, test = datasets.split(data, rng.child("test"), cfg.data.test_fraction)
    frac = cfg.data.validation_fraction / max(1e-12, 1.0 - cfg.data.test_fraction)
    train, val = datasets.split(rest, rng.child("validation"), frac)
    return Splits(train, val if len(val) else None, test if len(test) else None,
                  ood_sets(cfg, data.dim) if cfg.data.dataset != "bimodal_regression" else {})


def infer_task(cfg: ExperimentConfig, data: LabeledSet) -> tuple[str, int]:
    labels = np.asarray(data.labels, dtype=np.float64)
    integral = bool(np.all(labels == np.round(labels))) and labels.min() >= 0
    task = cfg.model.task
    if task == "auto":
        if not integral or cfg.data.dataset == "bimodal_regression":
            task = "regression"
        else:
            task = "binary" if int(labels.max()) + 1 <= 2 else "multiclass"
    if task == "regression":
        return task, 1
    if not integral:
        raise ConfigError("classification needs non-negative integer labels")
    k = max(2, int(labels.max()) + 1)
    if task == "binary" and k > 2:
        raise ConfigError("task = binary but labels have more than two classes")
    return task, k


# -- model --------------------------------------------------------------------

def build_member(cfg: ExperimentConfig, in_dim: int, task: str, num_classes: int, index: int) -> Member:
    m = cfg.model
    rng = Rng(cfg.seed).child("member", index)
    width = m.width if m.input_projection else in_dim
    net = network.build_network(in_dim, width, m.depth, rng.child("net"),
                                activation=m.activation, dropout_rate=m.dropout_rate,
                                spec_norm_bound=m.spec_norm_bound,
                                power_iters=m.power_iterations,
                                project_input=m.input_projection)
    outputs = 1 if task in ("binary", "regression") else num_classes
    if m.head == "gp":
        head = RffGpHead(width, outputs, m.gp_hidden_dim, m.length_scale, m.kernel_amplitude,
                         m.prior_variance_tau, seed=_seed_from(rng.child("head")),
                         precision_mode=PrecisionUpdateMode(m.precision_mode, m.ridge_s,
                                                            m.discount_m),
                         input_projection_dim=m.gp_input_projection or None,
                         layer_norm=m.gp_layer_norm)
    else:
        head = DenseHead(width, outputs, rng.child("head"))
    return Member(net, head)


def trainer_config(cfg: ExperimentConfig, index: int) -> TrainerConfig:
    t = cfg.trainer
    return TrainerConfig(t.learning_rate, t.momentum, t.epochs, t.batch_size,
                         cfg.model.prior_variance_tau,
                         seed=_seed_from(Rng(cfg.seed).child("member", index, "trainer")),
                         freeze_final_epoch=t.freeze_final_epoch)


def train_model(cfg: ExperimentConfig, splits: Splits | None = None) -> tuple[TrainedModel, Splits]:
    splits = splits or prepare_splits(cfg)
    task, k = infer_task(cfg, splits.train)
    norm = datasets.fit_norm(splits.train) if cfg.data.normalize else None
    train = datasets.apply_norm(splits.train, norm) if norm else splits.train
    members = []
    for i in range(cfg.predict.ensemble_size):
        member = build_member(cfg, train.dim, task, k, i)
        result = train_map(member.net, member.head, train, trainer_config(cfg, i), task)
        member.losses = result.losses
        log.info("member %d trained: final loss %.5f", i, result.losses[-1])
        members.append(member)
    model = TrainedModel(cfg, task, k, members, norm,
                         input_bounds=np.vstack([splits.train.inputs.min(axis=0),
                                                 splits.train.inputs.max(axis=0)]))
    if task != "regression":
        h = network.forward(members[0].net, train.inputs)
        model.gaussian = metrics.fit_gaussian(h, train.labels)
        if cfg.predict.calibrate_amplitude and splits.validation is not None:
            calibrate_amplitude(model, splits.validation)
    return model, splits


# -- prediction -----------------------------------------------------------------

def _inputs(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if model.norm is not None:
        x = (x - model.norm.mean) / model.norm.std
    return x


def member_moments(model: TrainedModel, x: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    x = _inputs(model, x)
    return [m.head.predict(network.forward(m.net, x)) for m in model.members]


def predict_posterior(model: TrainedModel, x: np.ndarray, rng: Rng | None = None) -> PredictivePosterior:
    """Ensemble- and dropout-averaged predictive distribution under the run's predict config."""
    p = model.config.predict
    x = _inputs(model, x)
    rng = rng or Rng(model.config.seed).child("predict")
    runs = []
    for i, m in enumerate(model.members):
        passes = p.dropout_passes if m.net.dropout_rate > 0 else 1
        for j in range(passes):
            stochastic = passes > 1
            h = network.forward(m.net, x, train_mode=stochastic,
                                rng=rng.child("dropout", i, j) if stochastic else None)
            mean, var = m.head.predict(h)
            if p.predict_mode == "mc":
                probs = mc_softmax(mean, var, p.mc_samples, rng.child("mc", i, j))
            else:
                probs = mean_field(mean, var, p.mean_field_factor)
            runs.append(PredictivePosterior(mean, var, probs))
    return ensemble_average(runs)


def normalized_uncertainty(max_prob: np.ndarray) -> np.ndarray:
    """``p (1 - p) / 0.25``: 1 at a coin flip, 0 at certainty."""
    p = np.asarray(max_prob, dtype=np.float64)
    return np.clip(p * (1.0 - p) / 0.25, 0.0, 1.0)


def _set_variance_scale(model: TrainedModel, scale: float):
    for m in model.members:
        if isinstance(m.head, RffGpHead):
            m.head.variance_scale = float(scale)


def calibrate_amplitude(model: TrainedModel, validation: LabeledSet,
                        grid: np.ndarray = AMPLITUDE_GRID) -> float:
    """Pick the posterior amplitude multiplier with the lowest validation NLL."""
    if not any(isinstance(m.head, RffGpHead) for m in model.members):
        return 1.0
    best, best_nll = 1.0, np.inf
    for s in grid:
        _set_variance_scale(model, s)
        nll = metrics.nll(predict_posterior(model, validation.inputs).probs, validation.labels)
        if nll < best_nll:
            best, best_nll = float(s), nll
    _set_variance_scale(model, best)
    log.info("calibrated amplitude multiplier %.4g (validation NLL %.5f)", best, best_nll)
    return best


# -- evaluation ---------------------------------------------------------------

def hidden(model: TrainedModel, x: np.ndarray) -> np.ndarray:
    return network.forward(model.members[0].net, _inputs(model, x))


def ood_scores(model: TrainedModel, x: np.ndarray) -> dict[str, np.ndarray]:
    """Confidence-style scores; higher means more in-distribution."""
    post = predict_posterior(model, x)
    out = {"msp": post.confidence,
           "dempster_shafer": metrics.dempster_shafer(post.adjusted_logits)}
    if model.gaussian is not None:
        h = hidden(model, x)
        out["mahalanobis"] = metrics.mahalanobis(model.gaussian, h)
        out["relative_mahalanobis"] = metrics.relative_mahalanobis(model.gaussian, h)
    return out


def evaluate(model: TrainedModel, data: LabeledSet,
             ood: dict[str, LabeledSet] | None = None) -> metrics.EvalReport:
    if model.task == "regression":
        raise ConfigError("eval reports are defined for classification models only")
    post = predict_posterior(model, data.inputs)
    labels = np.asarray(data.labels).astype(np.int64)
    report = metrics.EvalReport(
        accuracy=metrics.accuracy(post.probs, labels), ece=metrics.ece(post.probs, labels),
        nll=metrics.nll(post.probs, labels), brier=metrics.brier(post.probs, labels),
        n=len(data), bin_stats=metrics.ece_bins(post.probs, labels))
    if ood:
        ind_scores = ood_scores(model, data.inputs)
        for name, od in sorted(ood.items()):
            od_scores = ood_scores(model, od.inputs)
            report.ood[name] = {s: {"auroc": metrics.auroc(ind_scores[s], od_scores[s]),
                                    "aupr": metrics.aupr(ind_scores[s], od_scores[s])}
                                for s in ind_scores}
    return report


def parse_grid(text: str, dim: int = 2) -> list[np.ndarray]:
    """``"x0:lo:hi:n,x1:lo:hi:n"`` -> one axis array per input dimension."""
    axes: dict[int, np.ndarray] = {}
    for part in text.split(","):
        bits = part.strip().split(":")
        if len(bits) != 4 or not bits[0].startswith("x"):
            raise ConfigError(f"bad grid axis {part!r}; expected x<i>:lo:hi:n")
        try:
            i, lo, hi, n = int(bits[0][1:]), float(bits[1]), float(bits[2]), int(bits[3])
        except ValueError:
            raise ConfigError(f"bad grid axis {part!r}") from None
        if n < 1 or (n > 1 and hi <= lo):
            raise ConfigError(f"grid axis {part!r} needs n >= 1 and hi > lo")
        axes[i] = np.linspace(lo, hi, n)
    if sorted(axes) != list(range(dim)):
        raise ConfigError(f"grid must define axes x0..x{dim - 1}")
    return [axes[i] for i in range(dim)]


def default_grid(model: TrainedModel, n: int = 100) -> list[np.ndarray]:
    lo, hi = model.input_bounds
    center, half = (lo + hi) / 2, (hi - lo)  # bounding box inflated 2x
    return [np.linspace(c - h, c + h, n) for c, h in zip(center, half)]


def surface(model: TrainedModel, axes: list[np.ndarray]) -> np.ndarray:
    """Rows ``x0, x1, max_prob, u_normalized, variance`` over the grid (x0 slowest)."""
    if model.in_dim != 2 or len(axes) != 2:
        raise DimensionUnsupported("uncertainty surfaces need a 2-D input model")
    g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
    x = np.column_stack([g0.ravel(), g1.ravel()])
    post = predict_posterior(model, x)
    conf = post.confidence
    return np.column_stack([x, conf, normalized_uncertainty(conf), post.variance])

