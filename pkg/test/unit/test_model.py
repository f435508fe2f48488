import dataclasses

import numpy as np
import pytest

import model as model_module
from invariants import dense_svgp_elbo
from likelihoods import Bernoulli, Gaussian
from model import (
    DiffGPModel,
    bind,
    elbo,
    init_model,
    init_predictor,
    kmeans_inducing,
    parameters,
    predict,
    svgp_elbo,
)
from numerics import autodiff as ad
from numerics.gradcheck import check_gradients
from kernels.rbf import kernel_matrix
from sdeflow import FieldConditional, FlowConfig, InducingField, draw_path_noise, integrate
from svgp import kl_gaussian, variational_marginal


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1]
    return X, y


@pytest.fixture
def model(data):
    X, _ = data
    m = init_model(X, "regression", M=4, flow=FlowConfig(T=0.5, n_steps=5, seed=3), seed=3)
    values = parameters(m)
    rng = np.random.default_rng(1)
    values["field.q_u.mean"] = 0.3 * rng.standard_normal(values["field.q_u.mean"].shape)
    values["predictor.q_u.mean"] = rng.standard_normal(4)
    return bind(m, values)


def test_parameters_names_every_trainable_array(model):
    names = set(parameters(model))
    assert {
        "field.Z",
        "field.q_u.mean",
        "field.q_u.sqrt_raw",
        "field.kernel.spatial.log_lengthscales",
        "field.kernel.spatial.log_signal_variance",
        "predictor.Z",
        "predictor.q_u.mean",
        "predictor.q_u.sqrt_raw",
        "predictor.kernel.log_lengthscales",
        "predictor.kernel.log_signal_variance",
        "predictor.likelihood.log_noise_variance",
    } == names


def test_temporal_inducing_times_are_frozen(data):
    X, _ = data
    m = init_model(X, "regression", M=3, flow=FlowConfig(T=1.0), n_temporal=3)
    assert "field.Z_t" not in parameters(m)
    assert "field.Z_t" in parameters(m, include_frozen=True)
    assert "field.kernel.temporal.log_lengthscales" in parameters(m)


def test_bind_replaces_only_named_arrays(model):
    new = bind(model, {"predictor.Z": np.zeros((4, 2))})
    np.testing.assert_array_equal(new.predictor.Z, np.zeros((4, 2)))
    np.testing.assert_array_equal(new.field.Z, model.field.Z)


def test_model_rejects_dimension_mismatch(model):
    predictor = init_predictor(np.zeros((2, 3)), "regression")
    with pytest.raises(ValueError):
        DiffGPModel(field=model.field, predictor=predictor, flow=model.flow)


def test_init_predictor_rejects_unknown_task():
    with pytest.raises(ValueError):
        init_predictor(np.zeros((2, 1)), "ranking")


def test_init_model_likelihood_by_task(data):
    X, _ = data
    assert isinstance(init_model(X, "regression", M=3).predictor.likelihood, Gaussian)
    binary = init_model(X, "binary", M=3)
    assert isinstance(binary.predictor.likelihood, Bernoulli)
    assert binary.task == "binary"


def test_kmeans_inducing_is_seeded_and_handles_small_data(data):
    X, _ = data
    np.testing.assert_array_equal(kmeans_inducing(X, 4, seed=2), kmeans_inducing(X, 4, seed=2))
    Z = kmeans_inducing(X, 12, seed=0)
    assert Z.shape == (12, 2)
    np.testing.assert_array_equal(Z[:10], X)


def test_kmeans_inducing_runs_a_fixed_number_of_lloyd_iterations(data, monkeypatch):
    seen = {}

    class RecordingKMeans(model_module.KMeans):
        def fit(self, X, y=None, sample_weight=None):
            seen.update(max_iter=self.max_iter, tol=self.tol, n_init=self.n_init)
            return super().fit(X, y, sample_weight)

    monkeypatch.setattr(model_module, "KMeans", RecordingKMeans)
    X, _ = data
    assert kmeans_inducing(X, 4, seed=0).shape == (4, 2)
    assert seen == {"max_iter": 10, "tol": 0.0, "n_init": 1}


def test_zero_flow_elbo_equals_dense_svgp(data, model):
    X, y = data
    m = dataclasses.replace(model, flow=FlowConfig(T=0.0))
    p = m.predictor
    L = p.q_u.factors()[0].value
    reference = dense_svgp_elbo(
        X,
        y,
        p.Z,
        np.exp(p.kernel.log_lengthscales),
        float(np.exp(p.kernel.log_signal_variance)),
        float(np.exp(p.likelihood.log_noise_variance)),
        p.q_u.mean,
        L @ L.T,
    )
    field_kl = float(FieldConditional(m.field).kl().value)
    assert float(elbo(m, X, y).value) == pytest.approx(reference - field_kl, abs=1e-10)
    assert float(svgp_elbo(p, X, y).value) == pytest.approx(reference, abs=1e-10)


def test_zero_flow_with_field_at_prior_reduces_to_svgp(data, model):
    X, y = data
    Z = model.field.Z
    prior_field = InducingField.init(Z, FlowConfig(T=0.0), sqrt_scale=1.0)
    m = DiffGPModel(field=prior_field, predictor=model.predictor, flow=FlowConfig(T=0.0))
    assert float(elbo(m, X, y).value) == pytest.approx(float(svgp_elbo(m.predictor, X, y).value), abs=1e-10)


def test_elbo_is_expected_likelihood_minus_both_kls(data, model):
    X, y = data
    noise = draw_path_noise(model.flow, 10, 2)
    bound = float(elbo(model, X, y, scale=3.0, noise=noise).value)

    p = model.predictor
    X_T = integrate(X, model.field, model.flow, noise=noise).X_T[0]
    mean, var = variational_marginal(X_T, p.Z, p.kernel, p.q_u)
    expected = 3.0 * float(ad.reduce_sum(p.likelihood.expected_log_lik(y, mean, var)).value)
    kl_g = float(kl_gaussian(p.q_u, K_zz=kernel_matrix(p.Z, p.Z, p.kernel)).value)
    kl_f = float(FieldConditional(model.field).kl().value)

    assert kl_g >= 0.0 and kl_f >= 0.0
    assert bound == pytest.approx(expected - kl_g - kl_f, rel=1e-10)
    assert bound <= expected


def test_minibatch_scaling_is_unbiased_with_shared_noise(data, model):
    X, y = data
    flow = model.flow
    noise = draw_path_noise(flow, 10, 2)
    full = float(elbo(model, X, y, noise=noise).value)
    batches = [np.arange(0, 5), np.arange(5, 10)]
    per_batch = [float(elbo(model, X[b], y[b], scale=2.0, noise=noise[:, :, b]).value) for b in batches]
    assert np.mean(per_batch) == pytest.approx(full, abs=1e-8)


def test_elbo_rejects_empty_batch(model):
    with pytest.raises(ValueError):
        elbo(model, np.zeros((0, 2)), np.zeros(0))


def test_elbo_gradients_match_finite_differences(data, model):
    X, y = data
    noise = draw_path_noise(model.flow, 10, 2, stream=(0,))
    report = check_gradients(lambda leaves: elbo(bind(model, leaves), X, y, noise=noise), parameters(model))
    assert report.passed, report.max_abs_error


def test_predict_shapes_and_noise_floor(data, model):
    X, _ = data
    pred = predict(model, X[:3], S_eval=4)
    assert pred.f_mean.shape == (4, 3) and pred.y_var.shape == (4, 3)
    assert pred.mean.shape == (3,)
    noise = float(np.exp(model.predictor.likelihood.log_noise_variance))
    assert np.all(pred.y_var >= noise)
    assert pred.trajectories.states.shape == (4, 6, 3, 2)


def test_predict_zero_flow_matches_plain_svgp(data, model):
    X, _ = data
    m = dataclasses.replace(model, flow=FlowConfig(T=0.0))
    pred = predict(m, X, S_eval=3)
    p = m.predictor
    mean, var = variational_marginal(X, p.Z, p.kernel, p.q_u)
    np.testing.assert_allclose(pred.f_mean, np.broadcast_to(mean.value, (3, 10)), atol=1e-12)
    np.testing.assert_allclose(pred.f_var, np.broadcast_to(var.value, (3, 10)), atol=1e-12)


def test_binary_predictions_are_probabilities(data):
    X, y = data
    m = init_model(X, "binary", M=3, flow=FlowConfig(T=0.3, n_steps=3))
    m = bind(m, {"predictor.q_u.mean": np.array([2.0, -2.0, 0.5])})
    pred = predict(m, X, S_eval=2)
    assert np.all((pred.y_mean > 0) & (pred.y_mean < 1))
    labels = np.where(y > 0, 1.0, -1.0)
    assert np.isfinite(float(elbo(m, X, labels).value))
