import json
import os

import numpy as np
import pytest

from checkpoint_store import CheckpointManager
from errors import ConfigError
from likelihoods import Bernoulli
from model import init_model, parameters, predict
from optimizer import Adam, AdamState
from sdeflow import FlowConfig
from trainer import TrainConfig


@pytest.fixture
def X():
    return np.random.default_rng(0).standard_normal((8, 2))


def _assert_same_parameters(a, b):
    pa, pb = parameters(a, include_frozen=True), parameters(b, include_frozen=True)
    assert set(pa) == set(pb)
    for name in pa:
        np.testing.assert_array_equal(pa[name], pb[name])


def test_save_and_load_restore_model_and_optimizer(tmp_path, X):
    model = init_model(X, "regression", M=3, flow=FlowConfig(T=0.7, n_steps=6, seed=4))
    state = AdamState(step=3, m={"predictor.Z": np.ones((3, 2))}, v={"predictor.Z": np.full((3, 2), 0.5)})
    optimizer = Adam(lr=0.02, state=state)
    cfg = TrainConfig(n_iters=10, warmstart_iters=0, seed=4)

    store = CheckpointManager(str(tmp_path / "run"))
    path = store.save(model, cfg, 7, optimizer)
    assert os.path.isfile(path)

    restored, restored_cfg, iteration, restored_opt = store.load()
    _assert_same_parameters(model, restored)
    assert restored.flow == model.flow
    assert restored_cfg == cfg and iteration == 7
    assert restored_opt.lr == 0.02 and restored_opt.state.step == 3
    np.testing.assert_array_equal(restored_opt.state.v["predictor.Z"], state.v["predictor.Z"])


def test_restored_model_predicts_identically(tmp_path, X):
    model = init_model(X, "regression", M=3, flow=FlowConfig(T=0.5, n_steps=3))
    store = CheckpointManager(str(tmp_path))
    store.save(model, TrainConfig(), 0)
    restored, _, _, optimizer = store.load()
    assert optimizer is None
    np.testing.assert_array_equal(predict(model, X, 3).y_mean, predict(restored, X, 3).y_mean)


def test_temporal_and_binary_structure_round_trip(tmp_path, X):
    model = init_model(X, "binary", M=3, flow=FlowConfig(T=1.0), n_temporal=2, n_quad=12)
    store = CheckpointManager(str(tmp_path))
    store.save(model, TrainConfig(), 0)
    restored, _, _, _ = store.load()
    assert restored.field.kernel.is_temporal
    assert isinstance(restored.predictor.likelihood, Bernoulli)
    assert restored.predictor.likelihood.n_quad == 12
    _assert_same_parameters(model, restored)


def test_checkpoint_is_plain_json(tmp_path, X):
    model = init_model(X, "regression", M=3)
    path = CheckpointManager(str(tmp_path)).save(model, TrainConfig(), 2)
    with open(path, encoding="utf-8") as f:
        document = json.load(f)
    assert document["iteration"] == 2
    assert document["parameters"]["predictor.Z"]["shape"] == [3, 2]


def test_missing_or_corrupt_checkpoint_raises_config_error(tmp_path):
    store = CheckpointManager(str(tmp_path))
    with pytest.raises(ConfigError):
        store.load()
    with open(store.path, "w", encoding="utf-8") as f:
        json.dump({"parameters": {}}, f)
    with pytest.raises(ConfigError):
        store.load()
