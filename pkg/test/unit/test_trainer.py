import dataclasses

import numpy as np
import pytest

import trainer
from checkpoint_store import CheckpointManager
from data_loader import Dataset
from errors import NonFiniteValue, TrainingAborted
from model import init_model, parameters, svgp_elbo
from sdeflow import FlowConfig
from svgp import variational_marginal
from trainer import TrainConfig, TrainTrace, fit, minibatch_indices, warmstart_sgp


@pytest.fixture
def dataset():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((12, 2))
    y = np.sin(X[:, 0]) - 0.3 * X[:, 1] + 0.05 * rng.standard_normal(12)
    return Dataset(X=X, y=y, feature_names=["a", "b"])


@pytest.fixture
def model(dataset):
    return init_model(dataset.X, "regression", M=4, flow=FlowConfig(T=0.5, n_steps=4, seed=1), seed=1)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(n_iters=-1)
    with pytest.raises(ValueError):
        TrainConfig(minibatch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(eval_every=0)


def test_batch_size_defaults_to_full_batch_for_small_data():
    cfg = TrainConfig()
    assert cfg.batch_size(300) == 300
    assert cfg.batch_size(2000) == 2000
    assert cfg.batch_size(2001) == 512
    assert TrainConfig(minibatch_size=64).batch_size(10) == 10


def test_minibatch_indices():
    np.testing.assert_array_equal(minibatch_indices(5, 8, seed=0, iteration=3), np.arange(5))
    a = minibatch_indices(100, 10, seed=0, iteration=3)
    np.testing.assert_array_equal(a, minibatch_indices(100, 10, seed=0, iteration=3))
    assert len(np.unique(a)) == 10 and np.all(np.diff(a) > 0)
    assert not np.array_equal(a, minibatch_indices(100, 10, seed=0, iteration=4))


def test_warmstart_with_no_iterations_returns_predictor(dataset, model):
    cfg = TrainConfig(warmstart_iters=0)
    assert warmstart_sgp(dataset, model.predictor, cfg) is model.predictor


def test_warmstart_improves_the_flow_free_bound(dataset, model):
    cfg = TrainConfig(warmstart_iters=60, eval_every=20, learning_rate=0.02)
    trace = TrainTrace()
    fitted = warmstart_sgp(dataset, model.predictor, cfg, trace)
    before = float(svgp_elbo(model.predictor, dataset.X, dataset.y).value)
    after = float(svgp_elbo(fitted, dataset.X, dataset.y).value)
    assert after > before
    assert [r.iteration for r in trace.records] == [20, 40, 60]
    assert {r.phase for r in trace.records} == {"warmstart"}


def test_fit_records_trace_and_keeps_parameters_finite(dataset, model):
    cfg = TrainConfig(n_iters=5, eval_every=2, warmstart_iters=0)
    result = fit(model, dataset, cfg)
    assert result.iteration == 5
    assert [r.iteration for r in result.trace.records] == [2, 4, 5]
    assert all(np.isfinite(r.elbo) for r in result.trace.records)
    assert result.trace.final_elbo == result.trace.records[-1].elbo
    for value in parameters(result.model).values():
        assert np.all(np.isfinite(value))
    assert result.optimizer.state.step == 5


def test_fit_is_deterministic(dataset, model):
    cfg = TrainConfig(n_iters=3, eval_every=1, warmstart_iters=0, minibatch_size=6)
    a = parameters(fit(model, dataset, cfg).model)
    b = parameters(fit(model, dataset, cfg).model)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_zero_flow_fit_follows_the_svgp_only_trajectory(dataset, model):
    still = dataclasses.replace(model, flow=FlowConfig(T=0.0, seed=1))
    for steps in (1, 3, 6):
        cfg = TrainConfig(n_iters=steps, warmstart_iters=steps, eval_every=1, minibatch_size=6, learning_rate=0.02)
        joint = parameters(fit(still, dataset, cfg).model.predictor)
        alone = parameters(warmstart_sgp(dataset, model.predictor, cfg))
        assert joint.keys() == alone.keys()
        for name in alone:
            np.testing.assert_allclose(joint[name], alone[name], rtol=1e-10, atol=1e-10, err_msg=f"{name} after {steps}")


def test_resumed_fit_matches_continuous_fit(tmp_path, dataset, model):
    cfg = TrainConfig(n_iters=4, eval_every=1, warmstart_iters=0, minibatch_size=6)
    continuous = fit(model, dataset, cfg)

    half = TrainConfig(n_iters=2, eval_every=1, warmstart_iters=0, minibatch_size=6)
    first = fit(model, dataset, half)
    store = CheckpointManager(str(tmp_path))
    store.save(first.model, half, first.iteration, first.optimizer)
    restored, saved_cfg, iteration, optimizer = store.load()
    assert iteration == 2 and saved_cfg == half
    resumed = fit(restored, dataset, half, optimizer=optimizer, start_iteration=iteration)

    assert resumed.iteration == 4
    expected, actual = parameters(continuous.model), parameters(resumed.model)
    for name in expected:
        np.testing.assert_allclose(actual[name], expected[name], rtol=1e-12, atol=1e-14)
    assert resumed.trace.records[-1].elbo == pytest.approx(continuous.trace.records[-1].elbo, rel=1e-12)


def test_numeric_failure_aborts_with_trace_and_last_model(monkeypatch, dataset, model):
    real_elbo = trainer.elbo
    calls = {"n": 0}

    def failing_elbo(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 3:
            raise NonFiniteValue("state overflow")
        return real_elbo(*args, **kwargs)

    monkeypatch.setattr(trainer, "elbo", failing_elbo)
    with pytest.raises(TrainingAborted) as info:
        fit(model, dataset, TrainConfig(n_iters=5, eval_every=1, warmstart_iters=0))
    assert len(info.value.trace) == 2
    assert isinstance(info.value.cause, NonFiniteValue)
    for value in parameters(info.value.model).values():
        assert np.all(np.isfinite(value))


@pytest.mark.slow
def test_warmstart_recovers_linear_trend():
    rng = np.random.default_rng(3)
    x = rng.uniform(-2.0, 2.0, size=(80, 1))
    data = Dataset(X=x, y=0.8 * x[:, 0] + 0.05 * rng.standard_normal(80), feature_names=["x"])
    predictor = init_model(data.X, "regression", M=10).predictor
    fitted = warmstart_sgp(data, predictor, TrainConfig(warmstart_iters=2000, eval_every=500))
    grid = np.array([[-1.0], [1.0]])
    mean, _ = variational_marginal(grid, fitted.Z, fitted.kernel, fitted.q_u)
    slope = (mean.value[1] - mean.value[0]) / 2.0
    assert slope == pytest.approx(0.8, abs=0.1)
