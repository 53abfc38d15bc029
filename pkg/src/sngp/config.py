"""INI experiment configuration with typed, validated sections."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

from .errors import ConfigError

DATASETS = ("two_moons", "two_ovals", "bimodal_regression", "csv")
TASKS = ("auto", "binary", "multiclass", "regression")


def default_text() -> str:
    return resources.files("sngp").joinpath("data/default.ini").read_text()


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_optional_float(s: str) -> float | None:
    return None if s.strip().lower() in ("none", "") else float(s)


def _parse_centers(s: str) -> list[tuple[float, ...]]:
    out = []
    for part in s.split(";"):
        if part.strip():
            out.append(tuple(float(v) for v in part.split(",")))
    return out


_PARSERS = {int: int, float: float, bool: _parse_bool, str: str.strip,
            "float|None": _parse_optional_float, "centers": _parse_centers}


@dataclass
class RunSection:
    seed: int


@dataclass
class DataSection:
    dataset: str
    path: str
    n_per_class: int
    n: int
    noise_std: float
    test_fraction: float
    validation_fraction: float
    normalize: bool
    moon_radius: float
    moon_offset_x: float
    moon_offset_y: float
    oval_major_std: float
    oval_minor_std: float
    oval_separation: float


@dataclass
class ModelSection:
    task: str
    depth: int
    width: int
    activation: str
    dropout_rate: float
    input_projection: bool
    spec_norm_bound: "float|None"
    power_iterations: int
    head: str
    gp_hidden_dim: int
    length_scale: float
    kernel_amplitude: float
    prior_variance_tau: float
    precision_mode: str
    ridge_s: float
    discount_m: float
    gp_input_projection: int
    gp_layer_norm: bool


@dataclass
class TrainerSection:
    learning_rate: float
    momentum: float
    epochs: int
    batch_size: int
    freeze_final_epoch: bool


@dataclass
class PredictSection:
    predict_mode: str
    mc_samples: int
    mean_field_factor: float
    dropout_passes: int
    ensemble_size: int
    calibrate_amplitude: bool


@dataclass
class OodSection:
    centers: "centers"
    std: float
    n: int


SECTIONS = {"run": RunSection, "data": DataSection, "model": ModelSection,
            "trainer": TrainerSection, "predict": PredictSection, "ood": OodSection}


@dataclass
class ExperimentConfig:
    run: RunSection
    data: DataSection
    model: ModelSection
    trainer: TrainerSection
    predict: PredictSection
    ood: OodSection
    raw: dict[str, dict[str, str]]

    @property
    def seed(self) -> int:
        return self.run.seed

    def to_ini(self) -> str:
        lines = []
        for section in SECTIONS:
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in self.raw[section].items()]
            lines.append("")
        return "\n".join(lines)


def _field_type(f):
    t = f.type.strip("'\"")
    return {"int": int, "float": float, "bool": bool, "str": str}.get(t, t)


def _build(parser: configparser.ConfigParser) -> ExperimentConfig:
    sections = {}
    raw = {}
    for name, cls in SECTIONS.items():
        values = {}
        raw[name] = {}
        for f in fields(cls):
            text = parser.get(name, f.name)
            raw[name][f.name] = text
            try:
                values[f.name] = _PARSERS[_field_type(f)](text)
            except (ValueError, KeyError) as exc:
                raise ConfigError(f"[{name}] {f.name} = {text!r}: {exc}") from None
        sections[name] = cls(**values)
    cfg = ExperimentConfig(raw=raw, **sections)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig) -> None:
    d, m, t, p, o = cfg.data, cfg.model, cfg.trainer, cfg.predict, cfg.ood
    checks = [
        (d.dataset in DATASETS, f"data.dataset must be one of {DATASETS}"),
        (d.dataset != "csv" or bool(d.path), "data.path is required for dataset = csv"),
        (d.n_per_class >= 1 and d.n >= 2, "data sizes must be positive"),
        (d.noise_std >= 0, "data.noise_std must be >= 0"),
        (0 <= d.test_fraction < 1 and 0 <= d.validation_fraction < 1
         and d.test_fraction + d.validation_fraction < 1, "split fractions must leave training data"),
        (m.task in TASKS, f"model.task must be one of {TASKS}"),
        (m.depth >= 0 and m.width >= 1, "model.depth >= 0 and model.width >= 1"),
        (m.activation in ("relu", "identity"), "model.activation must be relu or identity"),
        (0 <= m.dropout_rate < 1, "model.dropout_rate must be in [0, 1)"),
        (m.spec_norm_bound is None or m.spec_norm_bound > 0, "model.spec_norm_bound must be positive"),
        (m.power_iterations >= 1, "model.power_iterations must be >= 1"),
        (m.head in ("gp", "dense"), "model.head must be gp or dense"),
        (m.gp_hidden_dim >= 1, "model.gp_hidden_dim must be >= 1"),
        (min(m.length_scale, m.kernel_amplitude, m.prior_variance_tau, m.ridge_s) > 0,
         "kernel and prior parameters must be positive"),
        (m.precision_mode in ("exact", "moving_average"), "model.precision_mode must be exact or moving_average"),
        (0 < m.discount_m < 1, "model.discount_m must be in (0, 1)"),
        (m.gp_input_projection >= 0, "model.gp_input_projection must be >= 0"),
        (t.learning_rate > 0 and 0 <= t.momentum < 1, "trainer learning_rate > 0, momentum in [0, 1)"),
        (t.epochs >= 1 and t.batch_size >= 1, "trainer.epochs and trainer.batch_size must be >= 1"),
        (p.predict_mode in ("mean_field", "mc"), "predict.predict_mode must be mean_field or mc"),
        (p.mc_samples >= 1 and p.dropout_passes >= 1 and p.ensemble_size >= 1,
         "predict counts must be >= 1"),
        (p.mean_field_factor >= 0 and math.isfinite(p.mean_field_factor),
         "predict.mean_field_factor must be >= 0"),
        (o.std >= 0 and o.n >= 1, "ood.std >= 0 and ood.n >= 1"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def _parser_with_defaults() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.read_string(default_text())
    return parser


def _merge(parser: configparser.ConfigParser, text: str, source: str):
    user = configparser.ConfigParser(interpolation=None)
    try:
        user.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    for section in user.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, value in user.items(section):
            if not parser.has_option(section, key):
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            parser.set(section, key, value)


def apply_overrides(parser: configparser.ConfigParser, overrides: dict[str, str]):
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key or not parser.has_option(section, key):
            raise ConfigError(f"unknown config key {dotted!r}")
        parser.set(section, key, str(value))


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None,
                text: str | None = None) -> ExperimentConfig:
    """Shipped defaults, then ``path`` (or ``text``), then dotted ``overrides``."""
    parser = _parser_with_defaults()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        _merge(parser, text, str(path))
    elif text is not None:
        _merge(parser, text, "<text>")
    apply_overrides(parser, overrides or {})
    return _build(parser)


def from_raw(raw: dict[str, dict[str, str]]) -> ExperimentConfig:
    """Rebuild a config from the string snapshot stored in an artifact."""
    parser = _parser_with_defaults()
    apply_overrides(parser, {f"{s}.{k}": v for s, kv in raw.items() for k, v in kv.items()})
    return _build(parser)
