"""
Sparse variational GP building blocks: conditionals given inducing variables,
variational marginals, the Gaussian KL divergence and expected likelihoods.

The parameterization is unwhitened: q(u) = N(m, S) over the inducing values
themselves, with S = L L^T and L built from an unconstrained square matrix
whose diagonal is stored in log space.
"""

from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from kernels.rbf import KernelParams, kernel_diag, kernel_matrix
from likelihoods import (
    Bernoulli,
    Gaussian,
    expected_bernoulli_loglik,
    expected_gaussian_loglik,
)
from numerics import autodiff as ad

__all__ = [
    "VariationalGaussian",
    "PredictorGP",
    "conditional_marginals",
    "sparse_conditional",
    "variational_marginal",
    "kl_gaussian",
    "expected_gaussian_loglik",
    "expected_bernoulli_loglik",
]


@dataclass
class VariationalGaussian:
    """
    q(u) = prod_p N(mean[:, p], L_p L_p^T).

    Attributes:
        mean: [M] for a single output, or [M x P] for P independent outputs.
        sqrt_raw: [M x M] (single output) or [P x M x M] unconstrained factors;
            see `numerics.autodiff.triangular_factor`.
    """

    mean: "ad.ArrayLike"
    sqrt_raw: "ad.ArrayLike"

    @classmethod
    def from_cholesky(cls, mean: np.ndarray, L: np.ndarray):
        """Builds the raw parameters from an explicit mean and lower factor(s)."""
        L = np.asarray(L, dtype=np.float64)
        raw = np.tril(L, k=-1)
        diag = np.diagonal(L, axis1=-2, axis2=-1)
        idx = np.arange(L.shape[-1])
        raw[..., idx, idx] = np.log(diag)
        return cls(mean=np.asarray(mean, dtype=np.float64), sqrt_raw=raw)

    @property
    def num_outputs(self) -> int:
        shape = ad.value_of(self.mean).shape
        return 1 if len(shape) == 1 else shape[1]

    @property
    def num_inducing(self) -> int:
        return ad.value_of(self.mean).shape[0]

    def mean_matrix(self) -> "ad.GradVar":
        mean = ad.lift(self.mean)
        return ad.reshape(mean, (mean.shape[0], 1)) if mean.ndim == 1 else mean

    def factors(self) -> List["ad.GradVar"]:
        raw = ad.lift(self.sqrt_raw)
        if raw.ndim == 2:
            return [ad.triangular_factor(raw)]
        return [ad.triangular_factor(raw[p]) for p in range(raw.shape[0])]


@dataclass
class PredictorGP:
    """The predictor g: inducing inputs Z [M x D], q(u_g), kernel and likelihood."""

    Z: "ad.ArrayLike"
    q_u: VariationalGaussian
    kernel: KernelParams
    likelihood: Union[Gaussian, Bernoulli]

    @property
    def input_dim(self) -> int:
        return ad.value_of(self.Z).shape[1]


def conditional_marginals(
    Kzx: "ad.GradVar",
    kxx_diag: "ad.GradVar",
    L_zz: "ad.GradVar",
    q_mean: "ad.GradVar",
    q_factors: List["ad.GradVar"],
) -> Tuple["ad.GradVar", "ad.GradVar"]:
    """
    Marginals of q(f(x)) = int p(f | u) q(u) du given precomputed factors.

    With Q = K_xZ K_ZZ^-1: mean = Q m_p and var_p = k_xx + diag(Q (S_p - K_ZZ) Q^T),
    returned as [N x P] arrays. Variances are not floored here.
    """
    A = ad.solve_triangular(L_zz, Kzx)
    B = ad.solve_triangular(L_zz, A, trans=True)
    n = Kzx.shape[1]
    mean = ad.matmul(ad.transpose(B), q_mean)
    prior_part = kxx_diag - ad.reduce_sum(ad.square(A), axis=0)
    columns = [
        ad.reshape(prior_part + ad.reduce_sum(ad.square(ad.matmul(ad.transpose(L_s), B)), axis=0), (n, 1))
        for L_s in q_factors
    ]
    var = columns[0] if len(columns) == 1 else ad.concatenate(columns, axis=1)
    return mean, var


def sparse_conditional(Xq, Z, kernel: KernelParams, u) -> Tuple["ad.GradVar", "ad.GradVar"]:
    """
    p(f(Xq) | u): mean Q u and full covariance K_XX - Q K_ZZ Q^T.

    Raises:
        FactorizationFailure: If K_ZZ cannot be factorized.
    """
    L = ad.cholesky(kernel_matrix(Z, Z, kernel))
    A = ad.solve_triangular(L, kernel_matrix(Z, Xq, kernel))
    B = ad.solve_triangular(L, A, trans=True)
    u = ad.lift(u)
    mean = ad.matmul(ad.transpose(B), ad.reshape(u, (u.shape[0], 1)))
    cov = kernel_matrix(Xq, Xq, kernel) - ad.matmul(ad.transpose(A), A)
    return ad.reshape(mean, (mean.shape[0],)), cov


def variational_marginal(
    Xq, Z, kernel: KernelParams, q_u: VariationalGaussian, chol: "ad.GradVar" = None
) -> Tuple["ad.GradVar", "ad.GradVar"]:
    """
    Marginal mean and variance of q(f(Xq)) after integrating out u ~ q_u.

    Args:
        chol: Optional precomputed Cholesky factor of K_ZZ.

    Returns:
        (mean, var), each [N] for a single-output q_u or [N x P] otherwise.
        Variances are floored at the configured variance floor.
    """
    Xq = ad.lift(Xq)
    L = chol if chol is not None else ad.cholesky(kernel_matrix(Z, Z, kernel))
    Kzx = kernel_matrix(Z, Xq, kernel)
    mean, var = conditional_marginals(
        Kzx, kernel_diag(Xq.shape[0], kernel), L, q_u.mean_matrix(), q_u.factors()
    )
    var = ad.variance_floor(var)
    if ad.value_of(q_u.mean).ndim == 1:
        n = Xq.shape[0]
        return ad.reshape(mean, (n,)), ad.reshape(var, (n,))
    return mean, var


def kl_gaussian(q: VariationalGaussian, K_zz=None, chol: "ad.GradVar" = None) -> "ad.GradVar":
    """
    KL[q(u) || N(0, K_ZZ)] in nats, summed over independent outputs:
    0.5 [tr(K^-1 S) + m^T K^-1 m - M + log|K| - log|S|].

    Pass either K_zz or its Cholesky factor `chol`.
    """
    L = chol if chol is not None else ad.cholesky(K_zz)
    m = q.num_inducing
    mean = q.mean_matrix()
    logdet_k = 2.0 * ad.reduce_sum(ad.log(ad.diag_part(L)))
    total = 0.5 * ad.reduce_sum(ad.square(ad.solve_triangular(L, mean)))
    for L_s in q.factors():
        trace_term = ad.reduce_sum(ad.square(ad.solve_triangular(L, L_s)))
        logdet_s = 2.0 * ad.reduce_sum(ad.log(ad.diag_part(L_s)))
        total = total + 0.5 * (trace_term - m + logdet_k - logdet_s)
    return total

