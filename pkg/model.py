"""
The differential deep GP: an SDE flow over the inputs followed by a sparse
GP predictor, with the evidence lower bound that trains both.
"""

import dataclasses
import logging
import warnings
from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans

import config
from kernels.rbf import KernelParams, kernel_matrix
from likelihoods import Bernoulli, Gaussian
from numerics import autodiff as ad
from numerics import linalg
from sdeflow import FieldConditional, FlowConfig, InducingField, TrajectoryBatch, integrate
from svgp import PredictorGP, VariationalGaussian, kl_gaussian, variational_marginal

logger = logging.getLogger(__name__)

TASKS = ("regression", "binary")

# Seed words separating the noise streams of training and prediction.
TRAIN_STREAM = 1
PREDICT_STREAM = 2


@dataclass
class DiffGPModel:
    """
    Inputs flow through `field` for time `flow.T`; `predictor` regresses or
    classifies the terminal states.
    """

    field: InducingField
    predictor: PredictorGP
    flow: FlowConfig

    def __post_init__(self):
        if self.predictor.input_dim != self.field.state_dim:
            raise ValueError(
                f"predictor expects D={self.predictor.input_dim} but the flow "
                f"state has D={self.field.state_dim}"
            )

    @property
    def task(self) -> str:
        return "regression" if isinstance(self.predictor.likelihood, Gaussian) else "binary"


@dataclass
class Prediction:
    """
    Predictive summaries for each of S flow samples.

    Attributes:
        f_mean, f_var: [S x N] moments of the latent predictor.
        y_mean, y_var: [S x N] observation-space summaries; for the binary
            task y_mean is P(y = +1).
        trajectories: The flow samples the predictions were made from.
    """

    f_mean: np.ndarray
    f_var: np.ndarray
    y_mean: np.ndarray
    y_var: np.ndarray
    task: str
    trajectories: Optional[TrajectoryBatch] = None

    @property
    def mean(self) -> np.ndarray:
        return self.y_mean.mean(axis=0)

    @property
    def var(self) -> np.ndarray:
        return self.y_var.mean(axis=0)

    @property
    def n_samples(self) -> int:
        return self.y_mean.shape[0]


# --- Parameter plumbing ---

def parameters(obj, prefix: str = "", include_frozen: bool = False) -> Dict[str, np.ndarray]:
    """
    Flattens the array leaves of a model (or any of its parts) into
    {dotted.name: array}. Fields marked `trainable: False` are skipped unless
    `include_frozen`.
    """
    out = {}
    for f in dataclasses.fields(obj):
        if not include_frozen and f.metadata.get("trainable", True) is False:
            continue
        name = f"{prefix}{f.name}"
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(parameters(value, f"{name}.", include_frozen))
        elif isinstance(value, ad.GradVar):
            out[name] = value.value
        elif isinstance(value, np.ndarray):
            out[name] = value
    return out


def bind(obj, values: Mapping[str, object], prefix: str = ""):
    """A copy of `obj` with the array leaves named in `values` replaced."""
    changes = {}
    for f in dataclasses.fields(obj):
        name = f"{prefix}{f.name}"
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            changes[f.name] = bind(value, values, f"{name}.")
        elif name in values:
            changes[f.name] = values[name]
    return dataclasses.replace(obj, **changes)


# --- Construction ---

def kmeans_inducing(X: np.ndarray, M: int, seed: int = config.SEED) -> np.ndarray:
    """
    M inducing locations from k-means centroids of X (fixed iteration count).
    With M >= N every point is used and the remainder are jittered copies.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if M >= n:
        logger.warning("%d inducing points requested for %d rows; padding with jittered copies", M, n)
        rng = np.random.default_rng(seed)
        extra = X[rng.integers(0, n, size=M - n)] + 0.1 * rng.standard_normal((M - n, X.shape[1]))
        return np.concatenate([X, extra], axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        km = KMeans(n_clusters=M, n_init=1, max_iter=config.KMEANS_ITERS, tol=0.0, random_state=seed).fit(X)
    return km.cluster_centers_


def init_predictor(Z: np.ndarray, task: str, n_quad: int = config.N_QUAD) -> PredictorGP:
    """Predictor with q(u_g) equal to its prior: m = 0, L = chol(K_ZZ)."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    Z = np.asarray(Z, dtype=np.float64)
    kernel = KernelParams.init(Z.shape[1], variance=config.PREDICTOR_VARIANCE_INIT)
    L, _ = linalg.cholesky_psd(kernel_matrix(Z, Z, kernel).value)
    likelihood = Gaussian.init() if task == "regression" else Bernoulli(n_quad=n_quad)
    return PredictorGP(
        Z=Z.copy(),
        q_u=VariationalGaussian.from_cholesky(np.zeros(Z.shape[0]), L),
        kernel=kernel,
        likelihood=likelihood,
    )


def init_model(
    X: np.ndarray,
    task: str,
    M: int = config.INDUCING_POINTS,
    flow: FlowConfig = None,
    n_temporal: int = None,
    seed: int = config.SEED,
    n_quad: int = config.N_QUAD,
) -> DiffGPModel:
    """
    Initial model for standardized inputs X: k-means inducing locations for
    both GPs, the predictor at its prior, and a weak flow field.
    """
    flow = flow or FlowConfig(seed=seed)
    Z = kmeans_inducing(X, M, seed)
    return DiffGPModel(
        field=InducingField.init(Z, flow, n_temporal=n_temporal),
        predictor=init_predictor(Z, task, n_quad),
        flow=flow,
    )


# --- Objectives ---

def predictor_chol(predictor: PredictorGP) -> "ad.GradVar":
    return ad.cholesky(kernel_matrix(predictor.Z, predictor.Z, predictor.kernel))


def svgp_elbo(predictor: PredictorGP, X, y, scale: float = 1.0) -> "ad.GradVar":
    """Flow-free sparse GP bound: scale * sum_i E_q[log p(y_i | g_i)] - KL[q(u_g) || p(u_g)]."""
    L = predictor_chol(predictor)
    mean, var = variational_marginal(X, predictor.Z, predictor.kernel, predictor.q_u, chol=L)
    expected = ad.reduce_sum(predictor.likelihood.expected_log_lik(y, mean, var))
    return scale * expected - kl_gaussian(predictor.q_u, chol=L)


def elbo(
    model: DiffGPModel,
    x_batch,
    y_batch,
    scale: float = 1.0,
    noise: np.ndarray = None,
    stream: Sequence[int] = (),
) -> "ad.GradVar":
    """
    Evidence lower bound on a minibatch:
    scale * sum_i (1/S) sum_s E_q[log p(y_i | g(x_iT^(s)))] - KL_g - KL_f.

    Args:
        scale: N / |batch|, so minibatch bounds are unbiased for the full data.
        noise: Optional fixed Wiener draws [S x n_steps x |batch| x D].
        stream: Seed words for drawing noise when `noise` is omitted.
    """
    if len(y_batch) == 0:
        raise ValueError("elbo needs a nonempty batch")
    field_conditional = FieldConditional(model.field)
    paths = integrate(x_batch, field_conditional, model.flow, noise=noise, stream=stream)

    predictor = model.predictor
    L = predictor_chol(predictor)
    expected = 0.0
    for X_T in paths.terminal:
        mean, var = variational_marginal(X_T, predictor.Z, predictor.kernel, predictor.q_u, chol=L)
        expected = expected + ad.reduce_sum(predictor.likelihood.expected_log_lik(y_batch, mean, var))
    expected = expected / float(paths.n_samples)
    return scale * expected - kl_gaussian(predictor.q_u, chol=L) - field_conditional.kl()


# --- Prediction ---

def predict(model: DiffGPModel, x_new, S_eval: int = config.EVAL_SAMPLES) -> Prediction:
    """
    Flows x_new along S_eval paths and summarizes the predictor on each
    terminal state; averaging happens downstream, per summary statistic.
    """
    flow = dataclasses.replace(model.flow, n_samples=S_eval)
    paths = integrate(np.asarray(x_new, dtype=np.float64), model.field, flow, stream=(PREDICT_STREAM,))
    predictor = model.predictor
    L = predictor_chol(predictor)
    f_mean, f_var = [], []
    for X_T in paths.terminal:
        mean, var = variational_marginal(X_T, predictor.Z, predictor.kernel, predictor.q_u, chol=L)
        f_mean.append(mean.value)
        f_var.append(var.value)
    f_mean, f_var = np.stack(f_mean), np.stack(f_var)
    y_mean, y_var = predictor.likelihood.predict(f_mean, f_var)
    return Prediction(f_mean, f_var, y_mean, y_var, model.task, trajectories=paths)
