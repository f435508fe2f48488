"""RBF kernel with automatic relevance determination (one lengthscale per input)."""

from dataclasses import dataclass

import numpy as np

import config
from numerics import autodiff as ad


@dataclass
class KernelParams:
    """
    Hyperparameters of one stationary RBF-ARD kernel, stored in log space.

    Attributes:
        log_lengthscales: [D] log lengthscales on the standardized input scale.
        log_signal_variance: Scalar log signal variance.
    """

    log_lengthscales: "ad.ArrayLike"
    log_signal_variance: "ad.ArrayLike"

    @classmethod
    def init(cls, input_dim: int, lengthscale: float = config.LENGTHSCALE_INIT, variance: float = 1.0):
        return cls(
            log_lengthscales=np.full(input_dim, np.log(lengthscale)),
            log_signal_variance=np.array(np.log(variance)),
        )

    @property
    def input_dim(self) -> int:
        return int(np.size(ad.value_of(self.log_lengthscales)))

    def signal_variance(self) -> "ad.GradVar":
        return ad.exp(self.log_signal_variance)


def rbf_ard(x: np.ndarray, x2: np.ndarray, p: KernelParams) -> float:
    """Scalar covariance s2 * exp(-0.5 * sum_d ((x_d - x2_d) / l_d)^2)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    x2 = np.atleast_1d(np.asarray(x2, dtype=np.float64))
    lengthscales = np.exp(ad.value_of(p.log_lengthscales))
    if x.shape != x2.shape or x.shape != lengthscales.shape:
        raise ValueError(
            f"rbf_ard dimension mismatch: {x.shape}, {x2.shape}, lengthscales {lengthscales.shape}"
        )
    scaled = (x - x2) / lengthscales
    return float(np.exp(ad.value_of(p.log_signal_variance)) * np.exp(-0.5 * np.sum(scaled * scaled, axis=-1)))


def kernel_matrix(X: "ad.ArrayLike", X2: "ad.ArrayLike", p: KernelParams) -> "ad.GradVar":
    """
    [N x M] matrix of rbf_ard evaluations, differentiable in X, X2 and p.

    Pairwise differences are formed explicitly ([N x M x D]); this keeps
    K(X, X) exactly symmetric with an exact diagonal of s2.
    """
    X, X2 = ad.lift(X), ad.lift(X2)
    if X.ndim != 2 or X2.ndim != 2 or X.shape[1] != X2.shape[1]:
        raise ValueError(f"kernel_matrix needs [N x D] and [M x D], got {X.shape} and {X2.shape}")
    if X.shape[1] != p.input_dim:
        raise ValueError(f"kernel has {p.input_dim} lengthscales but inputs have D={X.shape[1]}")

    n, d = X.shape
    m = X2.shape[0]
    lengthscales = ad.exp(p.log_lengthscales)
    diff = ad.reshape(X, (n, 1, d)) - ad.reshape(X2, (1, m, d))
    scaled = diff / ad.reshape(lengthscales, (1, 1, d))
    sqdist = ad.reduce_sum(ad.square(scaled), axis=2)
    return p.signal_variance() * ad.exp(-0.5 * sqdist)


def kernel_diag(n: int, p: KernelParams) -> "ad.GradVar":
    """diag K(X, X) for a stationary kernel: s2 repeated n times."""
    return ad.broadcast_to(p.signal_variance(), (n,))
