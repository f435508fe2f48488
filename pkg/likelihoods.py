"""Observation models for the predictor GP and their expected log-likelihoods."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import special

import config
from numerics import autodiff as ad


def expected_gaussian_loglik(y, mean, var, noise_variance) -> "ad.GradVar":
    """
    Per-point E_{g ~ N(mean, var)}[log N(y | g, noise_variance)] in closed form:
    log N(y | mean, s2) - var / (2 s2).
    """
    y = ad.lift(y)
    mean, var, noise_variance = ad.lift(mean), ad.lift(var), ad.lift(noise_variance)
    resid = y - mean
    return (
        -0.5 * np.log(2.0 * np.pi)
        - 0.5 * ad.log(noise_variance)
        - 0.5 * ad.square(resid) / noise_variance
        - 0.5 * var / noise_variance
    )


def expected_bernoulli_loglik(y, mean, var, n_quad: int = config.N_QUAD) -> "ad.GradVar":
    """
    Per-point E_{g ~ N(mean, var)}[log Phi(y g)] by Gauss-Hermite quadrature
    for labels y in {-1, +1}.
    """
    if n_quad < 1:
        raise ValueError("n_quad must be at least 1")
    y = np.asarray(ad.value_of(y), dtype=np.float64).reshape(-1, 1)
    mean, var = ad.lift(mean), ad.variance_floor(var)
    nodes, weights = hermgauss(n_quad)
    n = mean.shape[0]
    spread = ad.reshape(ad.sqrt(2.0 * var), (n, 1)) * nodes.reshape(1, -1)
    g = ad.reshape(mean, (n, 1)) + spread
    log_p = ad.log_ndtr(y * g)
    return ad.reduce_sum(log_p * (weights / np.sqrt(np.pi)).reshape(1, -1), axis=1)


class BaseLikelihood:
    """
    Abstract base class for observation models.

    Subclasses implement `expected_log_lik`, the per-point expectation of
    log p(y | g) under a Gaussian marginal of g, and `predict`, the
    predictive summary in observation space.
    """

    def expected_log_lik(self, y, mean, var) -> "ad.GradVar":
        raise NotImplementedError(
            "The expected_log_lik() method must be implemented by the subclass."
        )

    def predict(self, mean: np.ndarray, var: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError("The predict() method must be implemented by the subclass.")


@dataclass
class Gaussian(BaseLikelihood):
    """Additive Gaussian noise with a log-parameterized variance."""

    log_noise_variance: "ad.ArrayLike"

    @classmethod
    def init(cls, noise_variance: float = config.NOISE_VARIANCE_INIT):
        return cls(log_noise_variance=np.array(np.log(noise_variance)))

    def noise_variance(self) -> "ad.GradVar":
        return ad.exp(self.log_noise_variance)

    def expected_log_lik(self, y, mean, var):
        return expected_gaussian_loglik(y, mean, var, self.noise_variance())

    def predict(self, mean, var):
        """Predictive mean and variance of y, which includes the noise floor."""
        return np.asarray(mean), np.asarray(var) + float(np.exp(ad.value_of(self.log_noise_variance)))


@dataclass
class Bernoulli(BaseLikelihood):
    """Binary labels in {-1, +1} with a probit link."""

    n_quad: int = config.N_QUAD

    def expected_log_lik(self, y, mean, var):
        return expected_bernoulli_loglik(y, mean, var, self.n_quad)

    def predict(self, mean, var):
        """P(y = +1) = E[Phi(g)] by quadrature, and its Bernoulli variance."""
        mean = np.asarray(mean, dtype=np.float64)
        var = np.maximum(np.asarray(var, dtype=np.float64), config.VARIANCE_FLOOR)
        nodes, weights = hermgauss(self.n_quad)
        g = mean[..., None] + np.sqrt(2.0 * var)[..., None] * nodes
        p = np.sum(special.ndtr(g) * weights, axis=-1) / np.sqrt(np.pi)
        return p, p * (1.0 - p)
