import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from sngp import artifact, pipeline
from sngp.config import load_config
from sngp.errors import ArtifactVersionMismatch, ConfigError, DimensionUnsupported

from helpers import TINY


@pytest.fixture(scope="module")
def trained():
    cfg = load_config(overrides=TINY)
    return pipeline.train_model(cfg)


def test_splits_and_task(trained):
    model, splits = trained
    assert model.task == "binary" and model.num_classes == 2
    assert len(splits.train) + len(splits.validation) + len(splits.test) == 120
    assert set(splits.ood) == {"ood_0"}
    assert model.members[0].head.finalized


def test_calibration_picks_grid_minimum(trained):
    model, splits = trained
    chosen = model.members[0].head.variance_scale
    assert chosen in pipeline.AMPLITUDE_GRID
    nlls = []
    for s in pipeline.AMPLITUDE_GRID:
        pipeline._set_variance_scale(model, s)
        nlls.append(pipeline.evaluate(model, splits.validation).nll)
    pipeline._set_variance_scale(model, chosen)
    assert min(nlls) == nlls[list(pipeline.AMPLITUDE_GRID).index(chosen)]


def test_report_schema(trained):
    model, splits = trained
    schema = json.loads(resources.files("sngp").joinpath("data/eval_report.schema.json").read_text())
    plain = pipeline.evaluate(model, splits.test).to_dict()
    jsonschema.validate(plain, schema)
    assert "ood" not in plain
    full = pipeline.evaluate(model, splits.test, splits.ood).to_dict()
    jsonschema.validate(full, schema)
    assert set(full["ood"]["ood_0"]) == {"msp", "dempster_shafer", "mahalanobis", "relative_mahalanobis"}
    assert sum(b["count"] for b in full["bin_stats"]) == full["n"]


def test_surface_contract(trained):
    model, _ = trained
    rows = pipeline.surface(model, pipeline.parse_grid("x0:-3:4:10,x1:-3:3:10"))
    assert rows.shape == (100, 5)
    assert np.all((rows[:, 3] >= 0) & (rows[:, 3] <= 1))
    np.testing.assert_allclose(pipeline.normalized_uncertainty(np.array([0.5, 0.0, 1.0])), [1, 0, 0])


def test_parse_grid_errors():
    with pytest.raises(ConfigError):
        pipeline.parse_grid("x0:0:1:5")
    with pytest.raises(ConfigError):
        pipeline.parse_grid("x0:1:0:5,x1:0:1:5")
    with pytest.raises(ConfigError):
        pipeline.parse_grid("a:0:1:5,x1:0:1:5")


def test_artifact_round_trip_bitwise(trained, tmp_path):
    model, splits = trained
    path = artifact.save(model, tmp_path / "m.json")
    back = artifact.load(path)
    x = np.vstack([splits.test.inputs, splits.ood["ood_0"].inputs])
    a, b = pipeline.predict_posterior(model, x), pipeline.predict_posterior(back, x)
    np.testing.assert_array_equal(a.probs, b.probs)
    np.testing.assert_array_equal(a.variance, b.variance)
    assert artifact.dumps(back) == path.read_text()


def test_artifact_stores_seed_not_features(trained):
    model, _ = trained
    head = artifact.to_dict(model)["members"][0]["head"]
    assert head["kind"] == "gp" and "W" not in head and head["frozen_shape"] == [64, 16]
    assert head["covariance"]["shape"] == [64, 64]


def test_artifact_version_mismatch(trained, tmp_path):
    model, _ = trained
    d = artifact.to_dict(model)
    d["format_version"] = 99
    (tmp_path / "m.json").write_text(json.dumps(d))
    with pytest.raises(ArtifactVersionMismatch):
        artifact.load(tmp_path / "m.json")


def test_dense_head_has_no_covariance():
    cfg = load_config(overrides={**TINY, "model.head": "dense", "model.spec_norm_bound": "none"})
    model, _ = pipeline.train_model(cfg)
    d = artifact.to_dict(model)["members"][0]["head"]
    assert d["kind"] == "dense" and "covariance" not in d


def test_ensemble_and_dropout_passes():
    cfg = load_config(overrides={**TINY, "predict.ensemble_size": "2", "predict.dropout_passes": "3",
                                 "model.dropout_rate": "0.1", "trainer.epochs": "5"})
    model, splits = pipeline.train_model(cfg)
    assert len(model.members) == 2
    post = pipeline.predict_posterior(model, splits.test.inputs)
    assert post.members == 6
    np.testing.assert_allclose(post.probs.sum(axis=1), 1.0)


def test_regression_run_and_eval_refusal():
    cfg = load_config(overrides={"data.dataset": "bimodal_regression", "model.depth": "2",
                                 "model.width": "8", "model.gp_hidden_dim": "32", "trainer.epochs": "3"})
    model, splits = pipeline.train_model(cfg)
    assert model.task == "regression" and not splits.ood
    with pytest.raises(ConfigError):
        pipeline.evaluate(model, splits.test)
    with pytest.raises(DimensionUnsupported):
        pipeline.surface(model, pipeline.parse_grid("x0:0:1:2,x1:0:1:2"))


def test_normalized_inputs():
    cfg = load_config(overrides={**TINY, "data.normalize": "true", "trainer.epochs": "3"})
    model, splits = pipeline.train_model(cfg)
    assert model.norm is not None
    np.testing.assert_allclose(model.norm.mean, splits.train.inputs.mean(axis=0))
